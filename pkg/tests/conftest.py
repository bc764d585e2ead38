import pytest

from medlinker import bundled
from medlinker.pipeline import Coder
from medlinker.terminology import ConceptEntry, Synonym, SourceTag, parse_code

EXAMPLE_TEXT = "Paciente de 60 años presenta hernia incisional con antecedentes de dm 2 y obesidad mórbida."


def entry(code, description, *synonyms, source=SourceTag.TABULAR, syn_source=None):
    syn_source = syn_source or source
    return ConceptEntry(parse_code(code), description, tuple(Synonym(s, syn_source) for s in synonyms), source)


@pytest.fixture(scope="session")
def toy_index():
    return bundled.index()


@pytest.fixture(scope="session")
def toy_coder(toy_index):
    return Coder(toy_index)
