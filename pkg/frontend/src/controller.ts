import { ApiError, SessionApi } from "./api.js";
import type { CreateSessionRequest, ViewPayload } from "./types.js";

export interface UiSessionState {
  sessionId: string | null;
  view: ViewPayload | null;
  selectedSample: number | null;
  toast: string | null;
  errorBanner: string | null;
  busy: boolean;
  /** Set after a network failure; invoke to retry the failed action. */
  retry: (() => Promise<void>) | null;
}

type Listener = (state: UiSessionState) => void;

/**
 * Holds the client-side session state and funnels every mutation through
 * the server: the view shown is always the server's latest payload, never
 * a locally computed one.
 */
export class AppController {
  readonly state: UiSessionState = {
    sessionId: null,
    view: null,
    selectedSample: null,
    toast: null,
    errorBanner: null,
    busy: false,
    retry: null,
  };

  private listeners: Listener[] = [];

  constructor(private readonly api: SessionApi) {}

  onChange(listener: Listener): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  private applyView(view: ViewPayload): void {
    this.state.view = view;
    this.state.sessionId = view.session_id;
    this.state.errorBanner = null;
    this.state.retry = null;
    if (this.state.selectedSample !== null && !view.pending_queries.includes(this.state.selectedSample)) {
      this.state.selectedSample = null;
    }
    this.emit();
  }

  private async guarded(action: () => Promise<void>): Promise<void> {
    if (this.state.busy) return; // at most one in-flight mutation
    this.state.busy = true;
    this.state.toast = null;
    this.emit();
    try {
      await action();
    } catch (error) {
      if (error instanceof ApiError) {
        if (error.status === 409) {
          this.state.toast = "not a pending query";
        } else {
          this.state.toast = `server rejected the request (${error.status}): ${error.message}`;
        }
      } else {
        this.state.toast = "network failure - retry?";
        this.state.retry = () => this.guarded(action);
      }
      this.emit();
    } finally {
      this.state.busy = false;
      this.emit();
    }
  }

  async createSession(request: CreateSessionRequest): Promise<void> {
    await this.guarded(async () => {
      this.applyView(await this.api.createSession(request));
    });
  }

  selectSample(sampleId: number | null): void {
    this.state.selectedSample = sampleId;
    this.emit();
  }

  async submitLabel(sampleId: number, classId: number): Promise<void> {
    const sessionId = this.state.sessionId;
    if (sessionId === null) {
      this.state.toast = "no active session";
      this.emit();
      return;
    }
    await this.guarded(async () => {
      this.applyView(await this.api.submitLabel(sessionId, sampleId, classId));
    });
  }

  async refresh(): Promise<void> {
    const sessionId = this.state.sessionId;
    if (sessionId === null) return;
    await this.guarded(async () => {
      this.applyView(await this.api.getView(sessionId));
    });
  }

  async retryLast(): Promise<void> {
    const retry = this.state.retry;
    if (retry) {
      this.state.retry = null;
      await retry();
    }
  }

  showSchemaError(message: string): void {
    this.state.errorBanner = message;
    this.emit();
  }
}
