"""Text-generation clients: the HTTP endpoint adapter and the deterministic
mocks that ship with the repo for offline runs and tests.

The wire contract is HTTP JSON: request {prompt, temperature, top_p, n},
response {completions: [text, ...]}. The mocks implement the same generate()
surface in-process and ground their reports in the prompt's data block, so a
mock-backed run exercises the full validation path.
"""

from __future__ import annotations

from typing import Protocol

import httpx

from .errors import TransportError
from .summarize import EXTENDED_MARKER, parse_data_block, section_headers

MODE_WORDS = {"car": "cars", "truck": "trucks", "ped": "pedestrians", "bike": "cyclists"}


class TextGenClient(Protocol):
    def generate(self, prompt: str, temperature: float, top_p: float, n: int) -> list[str]:
        ...


class HttpTextGenClient:
    """Adapter for any HTTP endpoint implementing the completions contract."""

    def __init__(
        self,
        endpoint_url: str,
        token: str | None = None,
        timeout_s: float = 60.0,
        client: httpx.Client | None = None,
    ) -> None:
        self.endpoint_url = endpoint_url
        self.token = token
        self.timeout_s = timeout_s
        self._client = client

    def generate(self, prompt: str, temperature: float, top_p: float, n: int) -> list[str]:
        payload = {"prompt": prompt, "temperature": temperature, "top_p": top_p, "n": n}
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        try:
            if self._client is not None:
                resp = self._client.post(self.endpoint_url, json=payload, headers=headers)
            else:
                resp = httpx.post(
                    self.endpoint_url, json=payload, headers=headers, timeout=self.timeout_s
                )
            resp.raise_for_status()
            data = resp.json()
        except httpx.HTTPError as exc:
            raise TransportError(f"endpoint {self.endpoint_url} failed: {exc}") from exc
        except ValueError as exc:
            raise TransportError(f"endpoint returned non-JSON payload: {exc}") from exc
        completions = data.get("completions") if isinstance(data, dict) else None
        if not isinstance(completions, list) or not all(isinstance(c, str) for c in completions):
            raise TransportError("endpoint response missing 'completions' list")
        return completions


def _change_sentence(
    row: dict, pre_label: str, post_label: str, totals: dict[tuple[str, str], tuple[int, int]]
) -> str:
    mode_word = MODE_WORDS.get(row["mode"], row["mode"])
    pct = row["pct_delta"]
    pct_text = f" ({pct:+.1f}%)" if pct is not None else ""
    key = (row["partition"], row["mode"])
    pre_total, post_total = totals.get(key, (None, None))
    pre_tot_text = f" (total {pre_total})" if pre_total is not None else ""
    post_tot_text = f" (total {post_total})" if post_total is not None else ""
    return (
        f"In {row['partition']}, {mode_word} recorded a mean of {row['pre_value']:.2f}"
        f"{pre_tot_text} in {pre_label} and a mean of {row['post_value']:.2f}"
        f"{post_tot_text} in {post_label}, a change of {row['delta']:+.2f}{pct_text}."
    )


def render_mock_report(data: dict) -> str:
    """Template-fill a compliant two-part report from a parsed data block."""
    pre, post = data["pre_label"], data["post_label"]
    h0, h1, h2 = section_headers(pre, post)
    totals: dict[tuple[str, str], tuple[int, int]] = {}
    pre_totals = {(b["partition"], b["mode"]): b["total"] for b in data.get("stats_pre", [])}
    post_totals = {(b["partition"], b["mode"]): b["total"] for b in data.get("stats_post", [])}
    for key in set(pre_totals) & set(post_totals):
        totals[key] = (pre_totals[key], post_totals[key])
    sentences = [_change_sentence(row, pre, post, totals) for row in data["changes"]]
    main = [
        h0,
        "",
        f"This brief compares road-user density between {pre} and {post} across the monitored locations.",
        "",
        h1,
        "",
        "Counts come from viewpoint-normalized camera snapshots aggregated into half-hour packets; values are means per packet.",
        "",
        h2,
        "",
        *sentences,
    ]
    extended = [
        EXTENDED_MARKER,
        "",
        "The headline comparisons above are restated here with their full context.",
        *sentences,
    ]
    return "\n".join(main) + "\n\n" + "\n".join(extended)


class DeterministicMockClient:
    """Offline stand-in: parses the prompt's data block and echoes its numbers.

    Output is independent of temperature and identical across the n
    completions, which makes sweep behavior fully predictable.
    """

    def __init__(self) -> None:
        self.prompts: list[str] = []

    def _data_for_call(self, prompt: str) -> dict:
        return parse_data_block(prompt)

    def generate(self, prompt: str, temperature: float, top_p: float, n: int) -> list[str]:
        self.prompts.append(prompt)
        try:
            data = self._data_for_call(prompt)
        except ValueError as exc:
            raise TransportError(f"mock could not find a data block: {exc}") from exc
        return [render_mock_report(data)] * n


class DriftingMockClient(DeterministicMockClient):
    """Scripted numeric drift: the first drift_calls responses misreport one
    percent change by drift_pp points, later responses are correct."""

    def __init__(self, drift_pp: float = 3.0, drift_calls: int = 3) -> None:
        super().__init__()
        self.drift_pp = drift_pp
        self.drift_calls = drift_calls
        self.calls = 0

    def _should_drift(self) -> bool:
        return self.calls <= self.drift_calls

    def _data_for_call(self, prompt: str) -> dict:
        self.calls += 1
        data = parse_data_block(prompt)
        if self._should_drift() and data["changes"]:
            row = data["changes"][0]
            if row["pct_delta"] is not None:
                row["pct_delta"] += self.drift_pp
        return data


class IncorrigibleMockClient(DriftingMockClient):
    """Never corrects, no matter how many corrective prompts arrive."""

    def _should_drift(self) -> bool:
        return True


class FailingMockClient:
    """Always raises, for exercising transport-error paths."""

    def generate(self, prompt: str, temperature: float, top_p: float, n: int) -> list[str]:
        raise TransportError("scripted endpoint failure")
