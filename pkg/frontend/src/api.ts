import type { CreateSessionRequest, Transcript, ViewPayload } from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function asJson<T>(response: Response): Promise<T> {
  const body = await response.text();
  if (!response.ok) {
    let detail = body;
    try {
      detail = JSON.parse(body).detail ?? body;
    } catch {
      // non-JSON error body, keep the raw text
    }
    throw new ApiError(response.status, String(detail));
  }
  return JSON.parse(body) as T;
}

/** Thin fetch wrapper; the server owns all session semantics. */
export class SessionApi {
  constructor(private readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async health(): Promise<{ status: string }> {
    return asJson(await fetch(this.url("/healthz")));
  }

  async createSession(request: CreateSessionRequest): Promise<ViewPayload> {
    return asJson(
      await fetch(this.url("/sessions"), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(request),
      }),
    );
  }

  async getView(sessionId: string): Promise<ViewPayload> {
    return asJson(await fetch(this.url(`/sessions/${sessionId}/view`)));
  }

  async submitLabel(sessionId: string, sampleId: number, classId: number): Promise<ViewPayload> {
    return asJson(
      await fetch(this.url(`/sessions/${sessionId}/labels`), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ sample_id: sampleId, class_id: classId }),
      }),
    );
  }

  async getTranscript(sessionId: string): Promise<Transcript> {
    return asJson(await fetch(this.url(`/sessions/${sessionId}/transcript`)));
  }
}
