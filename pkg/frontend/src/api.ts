// Typed client for the meterpipe REST API. Every displayed value originates
// from one of these responses; the UI never computes a reading itself.

export interface Geo {
  lat: number;
  lon: number;
}

export interface Detection {
  text: string;
  confidence: number;
  bbox: { x: number; y: number; w: number; h: number };
}

export interface RefinementCandidate {
  token: string;
  delta: number;
  confidence: number;
}

export interface ScanResponse {
  candidate_reading: string;
  fallback: boolean;
  detections: Detection[];
  candidates: RefinementCandidate[];
  image_digest: string;
  register_length: number;
  meter_id: string;
  error?: string;
}

export interface ConfirmResponse {
  ledger_height: number;
  tx_id: string;
  source: string;
}

export interface Meter {
  meter_id: string;
  customer_id: string;
  register_length: number;
  max_delta: number;
  initial_reading: string;
  geo: Geo;
}

export interface ReadingRow {
  meter_id: string;
  customer_id: string | null;
  reading: string;
  timestamp: number;
  image_digest: string;
  image_url: string;
  geo: Geo;
  source: string;
  ledger_height: number;
}

export interface AuditPage {
  records: ReadingRow[];
  total: number;
  page: number;
  page_size: number;
}

export interface LedgerStatus {
  height: number;
  tx_count: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
    readonly reason?: string,
  ) {
    super(message);
  }
}

async function errorFrom(response: Response): Promise<ApiError> {
  let message = `${response.status}`;
  let reason: string | undefined;
  try {
    const body = await response.json();
    const detail = body?.detail;
    if (typeof detail === "string") {
      message = detail;
    } else if (detail && typeof detail === "object") {
      message = detail.error ?? JSON.stringify(detail);
      reason = detail.reason;
    }
  } catch {
    // non-JSON body; keep the status text
  }
  return new ApiError(response.status, message, reason);
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly token: string,
  ) {}

  private headers(extra: Record<string, string> = {}): Record<string, string> {
    return { Authorization: `Bearer ${this.token}`, ...extra };
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await fetch(this.baseUrl + path, { headers: this.headers() });
    if (!response.ok) throw await errorFrom(response);
    return (await response.json()) as T;
  }

  /** Distinguish admin from customer using routes that already exist. */
  async probeRole(): Promise<"admin" | "customer"> {
    const response = await fetch(this.baseUrl + "/api/admin/readings?page_size=1", {
      headers: this.headers(),
    });
    if (response.ok) return "admin";
    if (response.status === 403) return "customer";
    throw await errorFrom(response);
  }

  async listMeters(): Promise<Meter[]> {
    const body = await this.getJson<{ meters: Meter[] }>("/api/meters");
    return body.meters;
  }

  /**
   * Upload raw image bytes. A backend outage (502) still carries a usable
   * fallback body, so both cases resolve with the parsed ScanResponse.
   */
  async scan(meterId: string, image: Blob, geo: Geo): Promise<{ ok: boolean; body: ScanResponse }> {
    const query = `meter_id=${encodeURIComponent(meterId)}&lat=${geo.lat}&lon=${geo.lon}`;
    const response = await fetch(`${this.baseUrl}/api/scan?${query}`, {
      method: "POST",
      headers: this.headers({ "Content-Type": "application/octet-stream" }),
      body: image,
    });
    if (response.ok || response.status === 502) {
      return { ok: response.ok, body: (await response.json()) as ScanResponse };
    }
    throw await errorFrom(response);
  }

  async confirm(meterId: string, reading: string, imageDigest: string, geo: Geo): Promise<ConfirmResponse> {
    const response = await fetch(`${this.baseUrl}/api/confirm`, {
      method: "POST",
      headers: this.headers({ "Content-Type": "application/json" }),
      body: JSON.stringify({ meter_id: meterId, reading, image_digest: imageDigest, geo }),
    });
    if (!response.ok) throw await errorFrom(response);
    return (await response.json()) as ConfirmResponse;
  }

  async adminReadings(customerId: string | null, page: number, pageSize: number): Promise<AuditPage> {
    const params = new URLSearchParams({ page: String(page), page_size: String(pageSize) });
    if (customerId) params.set("customer_id", customerId);
    return this.getJson<AuditPage>(`/api/admin/readings?${params.toString()}`);
  }

  async ledgerStatus(): Promise<LedgerStatus> {
    return this.getJson<LedgerStatus>("/api/ledger/status");
  }

  /** Images need the bearer header, so <img src> cannot fetch them directly. */
  async imageBlob(imageUrl: string): Promise<Blob> {
    const response = await fetch(this.baseUrl + imageUrl, { headers: this.headers() });
    if (!response.ok) throw await errorFrom(response);
    return response.blob();
  }
}
