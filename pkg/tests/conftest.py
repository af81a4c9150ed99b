import json

import pytest

from promptsearch.backends import ArtifactStore, BackendConfig, ChatClient, HashEmbedder, RetryPolicy, ScriptedChat
from promptsearch.optimizer import Backends
from promptsearch.synthetic import SyntheticAgents, SyntheticT2I


def no_sleep(_):
    pass


def scripted_client(replies, store=None, max_attempts=3):
    cfg = BackendConfig(retry=RetryPolicy(max_attempts=max_attempts, initial_backoff_ms=0))
    return ChatClient(ScriptedChat(replies), cfg, store=store, sleep=no_sleep)


def synthetic_backends(task=None, store=None, transport=None):
    store = store or ArtifactStore()
    chat = ChatClient(transport or SyntheticAgents(store), store=store, sleep=no_sleep)
    return Backends(chat, SyntheticT2I(store, task), HashEmbedder())


def as_json(obj):
    return json.dumps(obj)


@pytest.fixture
def store():
    return ArtifactStore()


# one line per acceptance criterion, printed after the test session
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
