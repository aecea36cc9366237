"""Tests for title search, document fetch and the corpus layout."""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from unittest.mock import Mock

import pytest
import requests
from bs4 import BeautifulSoup

from causalvote_src.chains import ABSTRACT_ONLY, FULL_TEXT
from causalvote_src.config import Config
from causalvote_src.retrieval import (
    FLAG_FETCH_FAILED,
    FLAG_NO_DOCUMENTS,
    FLAG_SEARCH_UNAVAILABLE,
    STATUS_COMPLETE,
    STATUS_PARTIAL,
    CorpusManifest,
    DocumentRecord,
    FixtureDocumentClient,
    FixtureSearchClient,
    PubMedClient,
    ScholarSearchClient,
    TitleHit,
    abstract_from_pubmed,
    build_corpus,
    build_query,
    build_retrieval_clients,
    fetch_documents,
    full_text_from_pmc,
    load_pair_documents,
    search_titles,
)
from causalvote_src.utils import read_json

FIXTURES = Path(__file__).parent / "fixtures"
PAIR = ("Smoking", "Lung Cancer")
OTHER_PAIR = ("Visit to Asia", "Tuberculosis")

PMC_XML = b"""<?xml version="1.0"?>
<pmc-articleset><article>
  <front><article-meta><title-group><article-title>Smoking</article-title></title-group></article-meta></front>
  <body>
    <sec><title>Results</title>
      <p>Smokers had a  higher incidence of lung cancer.</p>
      <p>The effect was dose dependent.</p>
    </sec>
  </body>
</article></pmc-articleset>"""

PUBMED_XML = b"""<?xml version="1.0"?>
<PubmedArticleSet><PubmedArticle><MedlineCitation><Article>
  <Abstract>
    <AbstractText Label="BACKGROUND">Tobacco is a known carcinogen.</AbstractText>
    <AbstractText Label="RESULTS">Incidence rose with exposure.</AbstractText>
  </Abstract>
</Article></MedlineCitation></PubmedArticle></PubmedArticleSet>"""


def offline_config(tmp_path, **overrides):
    values = dict(corpus_dir=str(tmp_path / "corpus"), offline=True, fixtures_dir=str(FIXTURES),
                  max_workers=2, delay_between_requests=0)
    values.update(overrides)
    return Config(**values)


def json_response(payload):
    response = Mock()
    response.json.return_value = payload
    return response


def content_response(content):
    response = Mock()
    response.content = content
    return response


class TestSearch:
    """Test title search."""

    def test_build_query(self):
        """Test the default and a custom query template."""
        assert build_query(*PAIR) == "Smoking and Lung Cancer"
        assert build_query(*PAIR, template='"{factorA}" {factorB} cohort') == '"Smoking" Lung Cancer cohort'

    def test_fixture_hits_in_rank_order(self):
        """Test that replayed hits keep service order and skip empty titles."""
        result = search_titles(FixtureSearchClient(FIXTURES), PAIR, k=20)
        assert result.query == "Smoking and Lung Cancer"
        assert [h.rank for h in result.hits] == [1, 2, 3, 4]
        assert result.hits[0].title == "Cigarette smoking and lung cancer risk"
        assert result.flags == []

    def test_k_limits_hits(self):
        """Test that at most k titles are kept."""
        result = search_titles(FixtureSearchClient(FIXTURES), PAIR, k=2)
        assert [h.title for h in result.hits] == [
            "Cigarette smoking and lung cancer risk",
            "Tobacco use and lung cancer incidence",
        ]

    def test_missing_fixture_gives_no_hits(self):
        """Test that a query without a fixture returns nothing."""
        assert search_titles(FixtureSearchClient(FIXTURES), ("Bronchitis", "Dyspnoea")).hits == []

    def test_invalid_k(self):
        """Test that k must be positive."""
        with pytest.raises(ValueError):
            search_titles(FixtureSearchClient(FIXTURES), PAIR, k=0)

    def test_unavailable_service_flagged(self):
        """Test that search failures give an empty, flagged result."""
        client = Mock()
        client.search.side_effect = requests.exceptions.ConnectionError("no route")
        result = search_titles(client, PAIR)
        assert result.hits == []
        assert result.flags == [FLAG_SEARCH_UNAVAILABLE]


class TestScholarSearchClient:
    """Test the SerpApi client with a mocked session."""

    def test_request_parameters(self):
        """Test the query parameters and parsed hits."""
        session = Mock()
        session.get.return_value = json_response({"organic_results": [
            {"title": "First", "link": "https://a"},
            {"title": "Second", "result_id": "x"},
        ]})
        client = ScholarSearchClient(Config(delay_between_requests=0), api_key="key", session=session)
        hits = client.search("Smoking and Lung Cancer", 2)

        params = session.get.call_args[1]["params"]
        assert params["engine"] == "google_scholar"
        assert params["q"] == "Smoking and Lung Cancer"
        assert params["num"] == 2
        assert params["api_key"] == "key"
        assert [(h.rank, h.title) for h in hits] == [(1, "First"), (2, "Second")]

    def test_stops_on_empty_page(self):
        """Test that pagination stops when the service runs out of results."""
        session = Mock()
        session.get.side_effect = [
            json_response({"organic_results": [{"title": "Only"}]}),
            json_response({"organic_results": []}),
        ]
        client = ScholarSearchClient(Config(delay_between_requests=0), api_key="key", session=session)
        assert [h.title for h in client.search("q", 5)] == ["Only"]
        assert client.call_count == 2

    def test_call_count_under_concurrency(self):
        """Test that calls from many worker threads are all counted."""
        session = Mock()
        session.get.return_value = json_response({"organic_results": [{"title": "Only"}]})
        client = ScholarSearchClient(Config(delay_between_requests=0), api_key="key", session=session)
        with ThreadPoolExecutor(max_workers=8) as executor:
            list(executor.map(lambda k: client.search(f"query {k}", 1), range(400)))
        assert client.call_count == 400

    def test_missing_key_is_unavailable(self, monkeypatch):
        """Test that a missing API key is reported as an unavailable service."""
        monkeypatch.delenv("SERPAPI_API_KEY", raising=False)
        client = ScholarSearchClient(Config(delay_between_requests=0), session=Mock())
        assert search_titles(client, PAIR).flags == [FLAG_SEARCH_UNAVAILABLE]


class TestPubMedClient:
    """Test PubMed Central and PubMed lookups with a mocked session."""

    def make_session(self, pmc_ids, pubmed_ids):
        def fake_get(url, params=None, timeout=None):
            if url.endswith("esearch.fcgi"):
                ids = pmc_ids if params["db"] == "pmc" else pubmed_ids
                return json_response({"esearchresult": {"idlist": ids}})
            return content_response(PMC_XML if params["db"] == "pmc" else PUBMED_XML)

        session = Mock()
        session.get.side_effect = fake_get
        return session

    def test_full_text_preferred(self):
        """Test that a PMC article is fetched as full text."""
        session = self.make_session(["123"], ["456"])
        client = PubMedClient(Config(delay_between_requests=0), session=session)
        record = client.fetch(TitleHit(1, "Smoking"))
        assert record.document_id == "PMC123"
        assert record.kind == FULL_TEXT
        assert "dose dependent" in record.text
        assert client.call_count == 2
        assert session.get.call_args_list[0][1]["params"]["tool"] == "causalvote"

    def test_abstract_fallback(self):
        """Test that the PubMed abstract is used when PMC has no article."""
        client = PubMedClient(Config(delay_between_requests=0), session=self.make_session([], ["456"]))
        record = client.fetch(TitleHit(3, "Tobacco"))
        assert record.document_id == "PMID456"
        assert record.kind == ABSTRACT_ONLY
        assert record.rank == 3
        assert record.text.startswith("BACKGROUND: Tobacco is a known carcinogen.")

    def test_call_count_under_concurrency(self):
        """Test that lookups from many worker threads are all counted."""
        client = PubMedClient(Config(delay_between_requests=0), session=self.make_session([], []))
        with ThreadPoolExecutor(max_workers=8) as executor:
            list(executor.map(lambda k: client.fetch(TitleHit(1, f"Title {k}")), range(200)))
        # Two searches per title: PMC, then PubMed
        assert client.call_count == 400

    def test_not_indexed(self):
        """Test that a title found in neither database is unavailable."""
        client = PubMedClient(Config(delay_between_requests=0), session=self.make_session([], []))
        assert client.fetch(TitleHit(1, "Unknown")) is None

    def test_xml_extraction(self):
        """Test body paragraphs and labelled abstract sections."""
        body = full_text_from_pmc(BeautifulSoup(PMC_XML, "lxml-xml"))
        assert body == "Smokers had a higher incidence of lung cancer.\n\nThe effect was dose dependent."
        abstract = abstract_from_pubmed(BeautifulSoup(PUBMED_XML, "lxml-xml"))
        assert abstract.endswith("RESULTS: Incidence rose with exposure.")
        assert full_text_from_pmc(BeautifulSoup(PUBMED_XML, "lxml-xml")) == ""


class TestFetchDocuments:
    """Test walking hits into documents."""

    @pytest.fixture
    def hits(self):
        return search_titles(FixtureSearchClient(FIXTURES), PAIR).hits

    def test_available_documents_kept(self, hits):
        """Test that unavailable and failing titles are skipped."""
        result = fetch_documents(FixtureDocumentClient(FIXTURES), hits)
        assert [r.document_id for r in result.records] == ["PMC100", "PMID200"]
        assert [r.kind for r in result.records] == [FULL_TEXT, ABSTRACT_ONLY]
        assert result.skipped == ["A monograph not indexed in PubMed", "An unreachable report"]
        assert result.flags == [FLAG_FETCH_FAILED]

    def test_cap(self, hits):
        """Test that the walk stops at the cap."""
        client = FixtureDocumentClient(FIXTURES)
        result = fetch_documents(client, hits, cap=1)
        assert [r.document_id for r in result.records] == ["PMC100"]
        assert client.call_count == 1
        assert result.flags == []

    def test_duplicates_dropped(self):
        """Test that two titles resolving to one document keep it once."""
        record = DocumentRecord("PMC1", "t", FULL_TEXT, "text", "2000-01-01T00:00:00+00:00")
        client = Mock()
        client.fetch.return_value = record
        result = fetch_documents(client, [TitleHit(1, "a"), TitleHit(2, "b")])
        assert len(result.records) == 1

    def test_no_documents_flag(self):
        """Test the flag for hits that yield nothing."""
        result = fetch_documents(FixtureDocumentClient(FIXTURES), [TitleHit(1, "A monograph not indexed in PubMed")])
        assert result.flags == [FLAG_NO_DOCUMENTS]

    def test_invalid_cap(self):
        """Test that the cap must be positive."""
        with pytest.raises(ValueError):
            fetch_documents(FixtureDocumentClient(FIXTURES), [], cap=0)

    def test_record_validation(self):
        """Test that records need text and a known kind."""
        with pytest.raises(ValueError):
            DocumentRecord("PMC1", "t", FULL_TEXT, "  ", "now")
        with pytest.raises(ValueError):
            DocumentRecord("PMC1", "t", "preprint", "text", "now")


class TestCorpus:
    """Test corpus building and loading."""

    def test_offline_clients(self, tmp_path):
        """Test fixture clients in offline mode."""
        search, documents = build_retrieval_clients(offline_config(tmp_path))
        assert isinstance(search, FixtureSearchClient)
        assert isinstance(documents, FixtureDocumentClient)
        with pytest.raises(ValueError):
            build_retrieval_clients(Config(offline=True))

    def test_build_and_load(self, tmp_path):
        """Test the corpus layout and reading documents back."""
        config = offline_config(tmp_path)
        manifest = build_corpus([PAIR, OTHER_PAIR], config, progress=False)

        pair_entry = manifest.pairs["Smoking__Lung_Cancer"]
        assert pair_entry.status == STATUS_PARTIAL
        assert pair_entry.flags == [FLAG_FETCH_FAILED]
        assert manifest.pairs["Visit_to_Asia__Tuberculosis"].status == STATUS_COMPLETE
        assert manifest.document_count == 3

        corpus = tmp_path / "corpus"
        assert (corpus / "Smoking__Lung_Cancer" / "doc_PMC100.txt").exists()
        assert read_json(corpus / "manifest.json")["documents"] == 3
        assert CorpusManifest.load(corpus).document_count == 3

        knowledge_bases = load_pair_documents(corpus, PAIR)
        assert [kb.kb_id for kb in knowledge_bases] == ["doc:PMC100", "doc:PMID200"]
        assert knowledge_bases[0].source_db == FULL_TEXT
        assert knowledge_bases[0].text.startswith("Cigarette smoking was strongly associated")

    def test_complete_pairs_reused(self, tmp_path):
        """Test that only partial pairs are searched again."""
        config = offline_config(tmp_path)
        build_corpus([PAIR, OTHER_PAIR], config, progress=False)

        search = Mock(wraps=FixtureSearchClient(FIXTURES))
        build_corpus([PAIR, OTHER_PAIR], config, search, FixtureDocumentClient(FIXTURES), progress=False)
        queries = [c[0][0] for c in search.search.call_args_list]
        assert queries == ["Smoking and Lung Cancer"]

    def test_pair_without_hits_is_complete(self, tmp_path):
        """Test that a pair with no search results is complete and empty."""
        manifest = build_corpus([("Bronchitis", "Dyspnoea")], offline_config(tmp_path), progress=False)
        entry = manifest.pairs["Bronchitis__Dyspnoea"]
        assert entry.status == STATUS_COMPLETE
        assert entry.documents == []
        assert load_pair_documents(tmp_path / "corpus", ("Bronchitis", "Dyspnoea")) == []

    def test_missing_pair(self, tmp_path):
        """Test loading a pair that was never built."""
        assert load_pair_documents(tmp_path, PAIR) == []
