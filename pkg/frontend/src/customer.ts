// Customer flow: pick a meter, capture an image, review the prefilled
// reading, confirm it to the ledger.

import { ApiClient, ApiError, Geo, Meter } from "./api";
import {
  ScanViewState,
  applyCommit,
  applyRejection,
  applyScanResponse,
  canConfirm,
  initialScanState,
} from "./state";

const DEFAULT_GEO: Geo = { lat: -37.8136, lon: 144.9631 };

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

async function currentGeo(): Promise<Geo> {
  if (!("geolocation" in navigator)) return DEFAULT_GEO;
  return new Promise((resolve) => {
    navigator.geolocation.getCurrentPosition(
      (pos) => resolve({ lat: pos.coords.latitude, lon: pos.coords.longitude }),
      () => resolve(DEFAULT_GEO),
      { timeout: 3000 },
    );
  });
}

export function customerView(api: ApiClient, root: HTMLElement): void {
  let state: ScanViewState = { ...initialScanState };
  let geo: Geo = DEFAULT_GEO;

  root.replaceChildren();
  const heading = el("h2", {}, "Submit a meter reading");
  const meterSelect = el("select", { id: "meter-select" });
  const fileInput = el("input", {
    id: "file-input",
    type: "file",
    accept: "image/*",
    capture: "environment",
  });
  const notice = el("p", { id: "scan-notice", class: "notice hidden" });
  const readingInput = el("input", { id: "reading-input", type: "text", inputmode: "numeric" });
  const confirmButton = el("button", { id: "confirm-button" }, "Confirm reading");
  const statusLine = el("p", { id: "status-line" });
  const detectionList = el("ul", { id: "detections" });

  function render(): void {
    confirmButton.disabled = !canConfirm(state);
    fileInput.disabled = state.inFlight;
    readingInput.disabled = state.inFlight || !state.scan;
    notice.classList.toggle("hidden", state.status.kind !== "fallback-notice");
    notice.textContent =
      state.status.kind === "fallback-notice"
        ? "Scanned value unavailable - showing your last reading. Edit the digits that changed."
        : "";
    switch (state.status.kind) {
      case "committed":
        statusLine.textContent = `Committed at ledger height ${state.status.height} (tx ${state.status.txId.slice(0, 12)}...)`;
        statusLine.className = "ok";
        break;
      case "rejected":
        statusLine.textContent = `Rejected by the ledger: ${state.status.reason}. Adjust the reading and retry.`;
        statusLine.className = "error";
        break;
      case "error":
        statusLine.textContent = `${state.status.message}${state.status.retryable ? " - retry when ready." : ""}`;
        statusLine.className = "error banner";
        break;
      default:
        statusLine.textContent = state.inFlight ? "Working..." : "";
        statusLine.className = "";
    }
  }

  fileInput.addEventListener("change", async () => {
    const file = fileInput.files?.[0];
    if (!file || state.inFlight) return;
    state = { ...state, meterId: meterSelect.value, inFlight: true, status: { kind: "idle" } };
    render();
    geo = await currentGeo();
    try {
      const { body } = await api.scan(meterSelect.value, file, geo);
      state = applyScanResponse(state, body);
      detectionList.replaceChildren(
        ...body.detections.map((d) =>
          el("li", {}, `${d.text} (confidence ${d.confidence.toFixed(2)})`),
        ),
      );
    } catch (error) {
      const message = error instanceof ApiError ? error.message : "network failure";
      state = { ...state, inFlight: false, status: { kind: "error", message, retryable: true } };
    }
    readingInput.value = state.readingField;
    render();
  });

  readingInput.addEventListener("input", () => {
    state = { ...state, readingField: readingInput.value };
    render();
  });

  confirmButton.addEventListener("click", async () => {
    const scan = state.scan;
    if (!canConfirm(state) || !scan) return;
    state = { ...state, inFlight: true };
    render();
    try {
      const result = await api.confirm(scan.meter_id, state.readingField, scan.image_digest, geo);
      state = applyCommit(state, result.ledger_height, result.tx_id);
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        state = applyRejection(state, error.reason ?? "LedgerRejected");
      } else {
        const message = error instanceof ApiError ? error.message : "network failure";
        state = { ...state, inFlight: false, status: { kind: "error", message, retryable: true } };
      }
    }
    render();
  });

  root.append(
    heading,
    el("label", { for: "meter-select" }, "Meter"),
    meterSelect,
    el("label", { for: "file-input" }, "Meter photo"),
    fileInput,
    notice,
    el("label", { for: "reading-input" }, "Reading"),
    readingInput,
    confirmButton,
    statusLine,
    detectionList,
  );
  render();

  api
    .listMeters()
    .then((meters: Meter[]) => {
      meterSelect.replaceChildren(
        ...meters.map((m) => el("option", { value: m.meter_id }, `${m.meter_id} (${m.register_length} digits)`)),
      );
    })
    .catch(() => {
      statusLine.textContent = "Could not load your meters - reload to retry.";
      statusLine.className = "error banner";
    });
}
