"""Tests for prompt templates."""

from pathlib import Path

import pytest

from causalvote_src.ground_truth import load_ground_truth
from causalvote_src.prompts import (
    ASSOCIATION_DOCUMENT,
    QUERY_TEMPLATES,
    RECHECK,
    PromptTemplate,
    TemplateError,
    UnboundPlaceholderError,
    available_templates,
    chain_bindings,
    format_factors,
    load_template,
    render,
    render_template,
)

GOLDEN_DIR = Path(__file__).parent / "golden"
DOCUMENT = "Cigarette smoking was strongly associated with lung cancer risk (odds ratio 9.1)."


@pytest.fixture
def bindings():
    truth = load_ground_truth("ASIA")
    return chain_bindings("Smoking", "Lung Cancer", truth.factors, truth.domain_text(), document=DOCUMENT)


class TestRendering:
    """Test placeholder substitution."""

    def test_substitutes_known_placeholders(self):
        """Test a simple substitution."""
        template = PromptTemplate("t", "Are {factorA} and {factorB} associated?")
        assert render_template(template, {"factorA": "X", "factorB": "Y"}) == "Are X and Y associated?"

    def test_other_braces_survive(self):
        """Test that braces around unknown names are left alone."""
        template = PromptTemplate("t", "{factorA} {not_a_placeholder} {}")
        assert render_template(template, {"factorA": "X"}) == "X {not_a_placeholder} {}"

    def test_single_pass(self):
        """Test that substituted values are not rendered again."""
        template = PromptTemplate("t", "{factorA}")
        assert render_template(template, {"factorA": "{factorB}"}) == "{factorB}"

    def test_unbound_placeholder(self):
        """Test that a missing binding names the placeholder."""
        template = PromptTemplate("t", "{factorA} and {factorB}")
        with pytest.raises(UnboundPlaceholderError) as excinfo:
            render_template(template, {"factorA": "X"})
        assert excinfo.value.placeholder == "factorB"
        assert "{factorB}" in str(excinfo.value)

    def test_document_template_needs_document(self, bindings):
        """Test that the document variant refuses to render without a document."""
        del bindings["document"]
        with pytest.raises(UnboundPlaceholderError, match="document"):
            render(ASSOCIATION_DOCUMENT, bindings)

    def test_placeholders(self):
        """Test placeholder discovery."""
        assert load_template(RECHECK).placeholders == frozenset({"factors", "factorA", "factorB"})

    def test_format_factors(self):
        """Test the factor list format."""
        assert format_factors(["A", "B", "C"]) == "A, B, C"


class TestTemplateFiles:
    """Test the shipped template files."""

    def test_all_query_templates_ship(self):
        """Test that every query template has a file."""
        shipped = available_templates()
        for name in QUERY_TEMPLATES:
            assert name in shipped

    def test_unknown_template(self):
        """Test that loading a missing template raises TemplateError."""
        with pytest.raises(TemplateError):
            load_template("no_such_template")

    def test_recheck_keeps_trailing_space(self):
        """Test that whitespace inside templates is preserved."""
        assert "indirectly associated? \n" in load_template(RECHECK).text

    def test_no_trailing_newline(self):
        """Test that the file's final newline is not part of the prompt."""
        for name in QUERY_TEMPLATES:
            assert not load_template(name).text.endswith("\n")

    @pytest.mark.parametrize("name", QUERY_TEMPLATES)
    def test_matches_golden(self, name, bindings):
        """Test rendered prompts byte-for-byte against golden files."""
        expected = (GOLDEN_DIR / f"{name}.txt").read_bytes().decode("utf-8")
        assert render(name, bindings) + "\n" == expected

    def test_custom_directory(self, tmp_path):
        """Test loading templates from another directory."""
        (tmp_path / "greeting.txt").write_text("Hello {factorA}\n", encoding="utf-8")
        assert render("greeting", {"factorA": "world"}, directory=tmp_path) == "Hello world"
