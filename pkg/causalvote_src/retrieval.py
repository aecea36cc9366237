"""Per-pair document pools: title search, document fetch and corpus layout.

Titles come from a scholarly search service (SerpApi's Google Scholar
engine by default); documents come from PubMed Central when a full text is
available and from the PubMed abstract otherwise. Both services sit behind
small client classes so fixture clients can replay recorded answers.

Corpus layout::

    corpus/
      manifest.json
      <factorA>__<factorB>/
        manifest.json
        doc_<id>.txt
"""

import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import requests
from bs4 import BeautifulSoup
from tqdm import tqdm

from .chains import ABSTRACT_ONLY, FULL_TEXT, KnowledgeBase
from .llm import RateLimiter, create_session
from .utils import (
    clean_text_content,
    create_directory,
    pair_directory_name,
    read_json,
    sanitize_filename,
    write_json,
)

if TYPE_CHECKING:
    from .config import Config

logger = logging.getLogger(__name__)

DEFAULT_QUERY_TEMPLATE = "{factorA} and {factorB}"
FIXTURE_TIMESTAMP = "2000-01-01T00:00:00+00:00"

# Flags
FLAG_SEARCH_UNAVAILABLE = "search-unavailable"
FLAG_FETCH_FAILED = "fetch-failed"
FLAG_NO_DOCUMENTS = "no-documents"

STATUS_COMPLETE = "complete"
STATUS_PARTIAL = "partial"


@dataclass(frozen=True)
class TitleHit:
    rank: int
    title: str
    link: Optional[str] = None
    result_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {"rank": self.rank, "title": self.title, "link": self.link, "result_id": self.result_id}


@dataclass(frozen=True)
class DocumentRecord:
    document_id: str
    title: str
    kind: str
    text: str
    retrieved_at: str
    rank: int = 0

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError(f"Document {self.document_id} has no text")
        if self.kind not in (FULL_TEXT, ABSTRACT_ONLY):
            raise ValueError(f"Unknown document kind: {self.kind!r}")

    @property
    def filename(self) -> str:
        return f"doc_{sanitize_filename(self.document_id)}.txt"

    def manifest_entry(self) -> dict:
        return {
            "id": self.document_id,
            "title": self.title,
            "kind": self.kind,
            "rank": self.rank,
            "file": self.filename,
            "retrieved_at": self.retrieved_at,
        }

    def to_knowledge_base(self) -> KnowledgeBase:
        return KnowledgeBase.document(self.document_id, self.text, self.kind)


def build_query(factor_a: str, factor_b: str, template: str = DEFAULT_QUERY_TEMPLATE) -> str:
    return template.replace("{factorA}", factor_a).replace("{factorB}", factor_b)


# Clients

class SearchClient(Protocol):
    def search(self, query: str, k: int) -> List[TitleHit]:
        ...


class DocumentClient(Protocol):
    def fetch(self, hit: TitleHit) -> Optional[DocumentRecord]:
        ...


def _now() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


def _hits_from_results(results: Sequence[dict], start_rank: int, k: int) -> List[TitleHit]:
    hits = []
    for item in results:
        title = clean_text_content(str(item.get("title", "")))
        if not title:
            continue
        hits.append(TitleHit(start_rank + len(hits), title, item.get("link"), item.get("result_id")))
        if start_rank + len(hits) > k:
            break
    return hits


class _CountingClient:
    """Thread-safe count of service calls; clients run on corpus worker threads."""

    def __init__(self) -> None:
        self.call_count = 0
        self._count_lock = threading.Lock()

    def _count_call(self) -> None:
        with self._count_lock:
            self.call_count += 1


class ScholarSearchClient(_CountingClient):
    """SerpApi Google Scholar search, paginated in service rank order."""

    PAGE_SIZE = 20

    def __init__(self, config: "Config", api_key: Optional[str] = None,
                 session: Optional[requests.Session] = None):
        self.config = config
        self.api_key = api_key or os.environ.get("SERPAPI_API_KEY")
        self.session = session or create_session(config.user_agent, config.max_retries, config.retry_delay)
        self.rate_limiter = RateLimiter(config.delay_between_requests)
        super().__init__()

    def search(self, query: str, k: int) -> List[TitleHit]:
        if not self.api_key:
            raise requests.exceptions.RequestException("SERPAPI_API_KEY is not set")
        hits: List[TitleHit] = []
        start = 0
        while len(hits) < k:
            params = {
                "engine": "google_scholar",
                "q": query,
                "num": min(self.PAGE_SIZE, k - len(hits)),
                "start": start,
                "api_key": self.api_key,
            }
            self.rate_limiter.wait()
            self._count_call()
            response = self.session.get(self.config.search_endpoint, params=params, timeout=self.config.timeout)
            response.raise_for_status()
            results = response.json().get("organic_results", [])
            if not results:
                break
            hits.extend(_hits_from_results(results, len(hits) + 1, k))
            start += len(results)
        return hits[:k]


class PubMedClient(_CountingClient):
    """NCBI E-utilities: PMC full text first, PubMed abstract as fallback."""

    def __init__(self, config: "Config", session: Optional[requests.Session] = None):
        self.config = config
        self.base = config.pubmed_endpoint.rstrip("/")
        self.session = session or create_session(config.user_agent, config.max_retries, config.retry_delay)
        self.rate_limiter = RateLimiter(config.delay_between_requests)
        self.identity = {"tool": "causalvote"}
        if os.environ.get("NCBI_API_KEY"):
            self.identity["api_key"] = os.environ["NCBI_API_KEY"]
        if os.environ.get("NCBI_EMAIL"):
            self.identity["email"] = os.environ["NCBI_EMAIL"]
        super().__init__()

    def _get(self, utility: str, params: dict) -> requests.Response:
        self.rate_limiter.wait()
        self._count_call()
        response = self.session.get(f"{self.base}/{utility}", params={**params, **self.identity},
                                    timeout=self.config.timeout)
        response.raise_for_status()
        return response

    def _search_id(self, database: str, title: str) -> Optional[str]:
        params = {"db": database, "term": f'"{title}"[Title]', "retmax": 1, "retmode": "json"}
        response = self._get("esearch.fcgi", params)
        ids = response.json().get("esearchresult", {}).get("idlist", [])
        return ids[0] if ids else None

    def _fetch_xml(self, database: str, identifier: str) -> BeautifulSoup:
        response = self._get("efetch.fcgi", {"db": database, "id": identifier, "retmode": "xml"})
        return BeautifulSoup(response.content, "lxml-xml")

    def fetch(self, hit: TitleHit) -> Optional[DocumentRecord]:
        pmc_id = self._search_id("pmc", hit.title)
        if pmc_id:
            text = full_text_from_pmc(self._fetch_xml("pmc", pmc_id))
            if text:
                return DocumentRecord(f"PMC{pmc_id}", hit.title, FULL_TEXT, text, _now(), hit.rank)
        pmid = self._search_id("pubmed", hit.title)
        if pmid:
            text = abstract_from_pubmed(self._fetch_xml("pubmed", pmid))
            if text:
                return DocumentRecord(f"PMID{pmid}", hit.title, ABSTRACT_ONLY, text, _now(), hit.rank)
        logger.info(f"'{hit.title}' is not available in PubMed")
        return None


def full_text_from_pmc(soup: BeautifulSoup) -> str:
    body = soup.find("body")
    if body is None:
        return ""
    paragraphs = [p.get_text(" ", strip=True) for p in body.find_all("p")]
    return clean_text_content("\n\n".join(p for p in paragraphs if p))


def abstract_from_pubmed(soup: BeautifulSoup) -> str:
    parts = []
    for node in soup.find_all("AbstractText"):
        text = node.get_text(" ", strip=True)
        if not text:
            continue
        label = node.get("Label")
        parts.append(f"{label}: {text}" if label else text)
    return clean_text_content("\n\n".join(parts))


class FixtureSearchClient(_CountingClient):
    """Replays search results from ``<fixtures>/search/<query>.json``."""

    def __init__(self, fixtures_dir: Union[str, Path]):
        self.directory = Path(fixtures_dir) / "search"
        super().__init__()

    def search(self, query: str, k: int) -> List[TitleHit]:
        self._count_call()
        path = self.directory / f"{sanitize_filename(query)}.json"
        if not path.exists():
            logger.debug(f"No search fixture for {query!r}")
            return []
        return _hits_from_results(read_json(path).get("organic_results", []), 1, k)[:k]


class FixtureDocumentClient(_CountingClient):
    """Replays documents from ``<fixtures>/documents.json``, keyed by title.

    Each entry may carry ``pmcid`` + ``full_text`` and/or ``pmid`` +
    ``abstract``; the full text wins when both are present.
    """

    def __init__(self, fixtures_dir: Union[str, Path]):
        path = Path(fixtures_dir) / "documents.json"
        self.documents: Dict[str, dict] = read_json(path) if path.exists() else {}
        super().__init__()

    def fetch(self, hit: TitleHit) -> Optional[DocumentRecord]:
        self._count_call()
        entry = self.documents.get(hit.title)
        if not entry:
            return None
        if entry.get("error"):
            raise requests.exceptions.ConnectionError(entry["error"])
        retrieved_at = entry.get("retrieved_at", FIXTURE_TIMESTAMP)
        if entry.get("full_text"):
            return DocumentRecord(f"PMC{entry['pmcid']}", hit.title, FULL_TEXT, entry["full_text"],
                                  retrieved_at, hit.rank)
        if entry.get("abstract"):
            return DocumentRecord(f"PMID{entry['pmid']}", hit.title, ABSTRACT_ONLY, entry["abstract"],
                                  retrieved_at, hit.rank)
        return None


def build_retrieval_clients(config: "Config") -> Tuple[SearchClient, DocumentClient]:
    if config.offline:
        if not config.fixtures_dir:
            raise ValueError("offline mode requires fixtures_dir")
        return FixtureSearchClient(config.fixtures_dir), FixtureDocumentClient(config.fixtures_dir)
    return ScholarSearchClient(config), PubMedClient(config)


# Operations

@dataclass
class SearchResult:
    query: str
    hits: List[TitleHit] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)


@dataclass
class FetchResult:
    records: List[DocumentRecord] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)


def search_titles(client: SearchClient, pair: Tuple[str, str], k: int = 20,
                  query_template: str = DEFAULT_QUERY_TEMPLATE) -> SearchResult:
    """Top ``k`` titles for the pair's query, in service rank order."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query = build_query(pair[0], pair[1], query_template)
    try:
        hits = client.search(query, k)[:k]
    except requests.exceptions.RequestException as e:
        logger.error(f"Search failed for {query!r}: {e}")
        return SearchResult(query, [], [FLAG_SEARCH_UNAVAILABLE])
    # Ranks follow the service order
    hits = [TitleHit(rank, h.title, h.link, h.result_id) for rank, h in enumerate(hits, start=1)]
    return SearchResult(query, hits)


def fetch_documents(client: DocumentClient, hits: Sequence[TitleHit], cap: int = 10) -> FetchResult:
    """Walk hits in rank order, keeping up to ``cap`` available documents."""
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    result = FetchResult()
    failures = 0
    seen = set()
    for hit in sorted(hits, key=lambda h: h.rank):
        if len(result.records) >= cap:
            break
        try:
            record = client.fetch(hit)
        except requests.exceptions.RequestException as e:
            logger.error(f"Fetch failed for '{hit.title}': {e}")
            failures += 1
            result.skipped.append(hit.title)
            continue
        if record is None:
            result.skipped.append(hit.title)
            continue
        if record.document_id in seen:
            continue
        seen.add(record.document_id)
        result.records.append(record)
    if failures:
        result.flags.append(FLAG_FETCH_FAILED)
    if hits and not result.records:
        result.flags.append(FLAG_NO_DOCUMENTS)
    return result


@dataclass
class PairCorpus:
    factor_a: str
    factor_b: str
    query: str
    documents: List[dict] = field(default_factory=list)
    status: str = STATUS_COMPLETE
    flags: List[str] = field(default_factory=list)

    @property
    def directory_name(self) -> str:
        return pair_directory_name(self.factor_a, self.factor_b)

    def to_dict(self) -> dict:
        return {
            "factors": [self.factor_a, self.factor_b],
            "query": self.query,
            "documents": self.documents,
            "status": self.status,
            "flags": self.flags,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "PairCorpus":
        factor_a, factor_b = payload["factors"]
        return cls(factor_a, factor_b, payload.get("query", ""), list(payload.get("documents", [])),
                   payload.get("status", STATUS_PARTIAL), list(payload.get("flags", [])))


@dataclass
class CorpusManifest:
    pairs: Dict[str, PairCorpus] = field(default_factory=dict)

    @property
    def document_count(self) -> int:
        return sum(len(p.documents) for p in self.pairs.values())

    def to_dict(self) -> dict:
        return {"pairs": {key: self.pairs[key].to_dict() for key in sorted(self.pairs)},
                "documents": self.document_count}

    @classmethod
    def load(cls, corpus_dir: Union[str, Path]) -> "CorpusManifest":
        path = Path(corpus_dir) / "manifest.json"
        if not path.exists():
            return cls()
        payload = read_json(path)
        return cls({key: PairCorpus.from_dict(value) for key, value in payload.get("pairs", {}).items()})


def _pair_manifest_path(corpus_dir: Path, pair: Tuple[str, str]) -> Path:
    return corpus_dir / pair_directory_name(*pair) / "manifest.json"


def _build_pair(pair: Tuple[str, str], corpus_dir: Path, search_client: SearchClient,
                document_client: DocumentClient, max_titles: int, max_documents: int,
                query_template: str) -> PairCorpus:
    search = search_titles(search_client, pair, max_titles, query_template)
    fetched = fetch_documents(document_client, search.hits, max_documents) if search.hits else FetchResult()
    directory = corpus_dir / pair_directory_name(*pair)
    create_directory(directory)
    for record in fetched.records:
        (directory / record.filename).write_text(record.text + "\n", encoding="utf-8")
    flags = search.flags + fetched.flags
    status = STATUS_PARTIAL if FLAG_SEARCH_UNAVAILABLE in flags or FLAG_FETCH_FAILED in flags else STATUS_COMPLETE
    entry = PairCorpus(pair[0], pair[1], search.query, [r.manifest_entry() for r in fetched.records], status, flags)
    write_json(directory / "manifest.json", entry.to_dict())
    return entry


def build_corpus(pairs: Sequence[Tuple[str, str]], config: "Config",
                 search_client: Optional[SearchClient] = None,
                 document_client: Optional[DocumentClient] = None,
                 progress: bool = True) -> CorpusManifest:
    """Search and fetch documents for every pair; complete pairs are reused."""
    corpus_dir = Path(config.corpus_dir)
    create_directory(corpus_dir)
    if search_client is None or document_client is None:
        default_search, default_documents = build_retrieval_clients(config)
        search_client = search_client or default_search
        document_client = document_client or default_documents

    manifest = CorpusManifest()
    todo = []
    for pair in pairs:
        path = _pair_manifest_path(corpus_dir, pair)
        if path.exists():
            existing = PairCorpus.from_dict(read_json(path))
            if existing.status == STATUS_COMPLETE:
                manifest.pairs[existing.directory_name] = existing
                continue
        todo.append(pair)

    if todo:
        logger.info(f"Building corpus for {len(todo)} pairs ({len(pairs) - len(todo)} already complete)")
        with ThreadPoolExecutor(max_workers=config.max_workers) as executor:
            future_to_pair = {
                executor.submit(_build_pair, pair, corpus_dir, search_client, document_client,
                                config.max_titles, config.max_documents, config.query_template): pair
                for pair in todo
            }
            with tqdm(total=len(todo), desc="Corpus", disable=not progress) as progress_bar:
                for future in as_completed(future_to_pair):
                    pair = future_to_pair[future]
                    try:
                        entry = future.result()
                    except Exception as e:
                        logger.error(f"Corpus build failed for {pair[0]} / {pair[1]}: {e}")
                        entry = PairCorpus(pair[0], pair[1], build_query(*pair, config.query_template),
                                           status=STATUS_PARTIAL, flags=[FLAG_FETCH_FAILED])
                    manifest.pairs[entry.directory_name] = entry
                    progress_bar.update(1)

    write_json(corpus_dir / "manifest.json", manifest.to_dict())
    logger.info(f"Corpus has {manifest.document_count} documents over {len(manifest.pairs)} pairs")
    return manifest


def load_pair_documents(corpus_dir: Union[str, Path], pair: Tuple[str, str]) -> List[KnowledgeBase]:
    """Document knowledge bases stored for a pair, in rank order."""
    path = _pair_manifest_path(Path(corpus_dir), pair)
    if not path.exists():
        return []
    entry = PairCorpus.from_dict(read_json(path))
    directory = path.parent
    knowledge_bases = []
    for document in sorted(entry.documents, key=lambda d: d.get("rank", 0)):
        file_path = directory / document["file"]
        if not file_path.exists():
            logger.warning(f"Missing document file {file_path}")
            continue
        text = file_path.read_text(encoding="utf-8").rstrip("\n")
        if not text.strip():
            continue
        knowledge_bases.append(KnowledgeBase.document(document["id"], text, document["kind"]))
    return knowledge_bases
