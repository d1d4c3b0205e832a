// Pure view-state logic for both flows, kept DOM-free so it unit-tests.

import type { ScanResponse } from "./api";

export interface ScanViewState {
  meterId: string | null;
  scan: ScanResponse | null;
  readingField: string;
  inFlight: boolean;
  status:
    | { kind: "idle" }
    | { kind: "fallback-notice" }
    | { kind: "committed"; height: number; txId: string }
    | { kind: "rejected"; reason: string }
    | { kind: "error"; message: string; retryable: boolean };
}

export const initialScanState: ScanViewState = {
  meterId: null,
  scan: null,
  readingField: "",
  inFlight: false,
  status: { kind: "idle" },
};

export function isDigitString(value: string): boolean {
  return value.length > 0 && [...value].every((c) => c >= "0" && c <= "9");
}

/** Confirm stays disabled until the field holds exactly register_length digits. */
export function canConfirm(state: ScanViewState): boolean {
  if (state.inFlight || !state.scan) return false;
  const { readingField } = state;
  return isDigitString(readingField) && readingField.length === state.scan.register_length;
}

/** A scan response prefills the editable field; fallback raises the notice. */
export function applyScanResponse(state: ScanViewState, scan: ScanResponse): ScanViewState {
  return {
    ...state,
    scan,
    readingField: scan.candidate_reading,
    inFlight: false,
    status: scan.fallback ? { kind: "fallback-notice" } : { kind: "idle" },
  };
}

export function applyRejection(state: ScanViewState, reason: string): ScanViewState {
  // the form stays editable: scan and readingField survive
  return { ...state, inFlight: false, status: { kind: "rejected", reason } };
}

export function applyCommit(state: ScanViewState, height: number, txId: string): ScanViewState {
  return { ...state, inFlight: false, status: { kind: "committed", height, txId } };
}

// -- pagination --------------------------------------------------------------

export function pageCount(total: number, pageSize: number): number {
  if (total <= 0) return 1;
  return Math.ceil(total / pageSize);
}

export function clampPage(page: number, total: number, pageSize: number): number {
  return Math.min(Math.max(1, page), pageCount(total, pageSize));
}

/** Row count on a given page; mirrors the service slice math. */
export function rowsOnPage(total: number, pageSize: number, page: number): number {
  const start = (page - 1) * pageSize;
  return Math.max(0, Math.min(pageSize, total - start));
}

export function formatTimestamp(ms: number): string {
  return new Date(ms).toISOString().replace("T", " ").slice(0, 19);
}

export function formatGeo(geo: { lat: number; lon: number }): string {
  // coordinates are shown verbatim as returned, no map widget
  return `${geo.lat}, ${geo.lon}`;
}
