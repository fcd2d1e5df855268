// App wiring: one GatewayClient, per-session transcripts, and the three
// panes (chat, trace inspector, evidence). Switching sessions swaps the
// whole transcript; nothing leaks across sessions.

import { GatewayClient, GatewayError } from './api';
import { renderChatPane } from './chat';
import { renderEvidencePanel } from './evidence';
import {
  TranscriptState,
  beginTurn,
  completeTurn,
  emptyTranscript,
  failTurn,
} from './transcript';
import { renderTraceInspector } from './trace';
import type { CompletedTurn } from './types';

const DEFAULT_GATEWAY = 'http://127.0.0.1:8800';

export class ChatApp {
  readonly client: GatewayClient;
  private transcripts = new Map<string, TranscriptState>();
  private activeId: string | null = null;

  constructor(
    readonly chatRoot: HTMLElement,
    readonly traceRoot: HTMLElement,
    readonly evidenceRoot: HTMLElement,
    readonly sessionSelect: HTMLSelectElement,
    baseUrl: string = DEFAULT_GATEWAY,
  ) {
    this.client = new GatewayClient(baseUrl);
  }

  get state(): TranscriptState | null {
    return this.activeId ? this.transcripts.get(this.activeId) ?? null : null;
  }

  private setState(next: TranscriptState): void {
    this.transcripts.set(next.sessionId, next);
    if (this.activeId === next.sessionId) this.render();
  }

  async newSession(): Promise<string> {
    const sessionId = await this.client.createSession();
    this.transcripts.set(sessionId, emptyTranscript(sessionId));
    const option = document.createElement('option');
    option.value = sessionId;
    option.textContent = `session ${this.sessionSelect.options.length + 1}`;
    this.sessionSelect.appendChild(option);
    this.switchSession(sessionId);
    return sessionId;
  }

  switchSession(sessionId: string): void {
    this.activeId = sessionId;
    this.sessionSelect.value = sessionId;
    this.render();
  }

  async send(text: string): Promise<CompletedTurn | null> {
    const state = this.state;
    if (!state || state.inFlight) return null;
    this.setState(beginTurn(state, text));
    try {
      const response = await this.client.sendMessage(state.sessionId, text);
      const stages = await this.client.getTrace(state.sessionId, response.trace_id);
      const turn: CompletedTurn = {
        userText: text,
        reply: response.reply,
        scores: response.scores,
        clusters: response.clusters ?? [],
        traceId: response.trace_id,
        error: response.error,
        stages,
      };
      this.setState(completeTurn(this.transcripts.get(state.sessionId)!, turn));
      this.inspect(turn);
      return turn;
    } catch (err) {
      const message = err instanceof GatewayError
        ? `Gateway error: ${err.message}. Your message was kept; retry when ready.`
        : `Unexpected failure: ${String(err)}`;
      this.setState(failTurn(this.transcripts.get(state.sessionId)!, message));
      return null;
    }
  }

  inspect(turn: CompletedTurn): void {
    renderTraceInspector(this.traceRoot, turn.traceId, turn.stages);
    renderEvidencePanel(this.evidenceRoot, turn.stages);
  }

  async inspectTraceId(traceId: string): Promise<void> {
    const state = this.state;
    if (!state) return;
    try {
      const stages = await this.client.getTrace(state.sessionId, traceId);
      renderTraceInspector(this.traceRoot, traceId, stages);
      renderEvidencePanel(this.evidenceRoot, stages);
    } catch (err) {
      if (err instanceof GatewayError && err.status === 404) {
        renderTraceInspector(this.traceRoot, traceId, null);
        return;
      }
      throw err;
    }
  }

  render(): void {
    const state = this.state;
    if (!state) return;
    renderChatPane(this.chatRoot, state, {
      onSend: (text) => void this.send(text),
      onChip: (text) => void this.send(text),
      onInspect: (turn) => this.inspect(turn),
    });
  }
}

export function mount(document_: Document = document): ChatApp {
  const chatRoot = document_.getElementById('chat')!;
  const traceRoot = document_.getElementById('trace')!;
  const evidenceRoot = document_.getElementById('evidence')!;
  const sessionSelect = document_.getElementById('session-select') as HTMLSelectElement;
  const newSession = document_.getElementById('new-session')!;

  const params = new URLSearchParams(document_.location?.search ?? '');
  const app = new ChatApp(
    chatRoot, traceRoot, evidenceRoot, sessionSelect,
    params.get('gateway') ?? DEFAULT_GATEWAY,
  );
  sessionSelect.addEventListener('change', () => app.switchSession(sessionSelect.value));
  newSession.addEventListener('click', () => void app.newSession());
  void app.newSession();
  return app;
}

declare global {
  interface Window { LEDGERLENS_NO_AUTOMOUNT?: boolean }
}

if (typeof window !== 'undefined' && !window.LEDGERLENS_NO_AUTOMOUNT) {
  window.addEventListener('DOMContentLoaded', () => mount());
}
