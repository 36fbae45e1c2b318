"""Wearable-cloud sync: download client and fixture-backed mock server."""

from .client import (AuthPermanentFailure, IntradaySeries, NetworkError, PartialDay, PollResult, SyncError,
                     TokenSet, WearableClient, poll_all, poll_participant, series_table, store_series)
from .mockserver import MockServer, MockServerError, initial_tokens, load_tokens, run_mock_server, write_fixture_day

__all__ = [
    "AuthPermanentFailure", "IntradaySeries", "NetworkError", "PartialDay", "PollResult", "SyncError", "TokenSet",
    "WearableClient", "poll_all", "poll_participant", "series_table", "store_series", "MockServer",
    "MockServerError", "initial_tokens", "load_tokens", "run_mock_server", "write_fixture_day",
]
