// Thin fetch client for the gateway. Failures throw GatewayError so the
// chat pane can show a retryable banner without losing the draft.

import type { TraceMessage, TurnResponse } from './types';

export class GatewayError extends Error {
  constructor(message: string, readonly status: number | null = null) {
    super(message);
    this.name = 'GatewayError';
  }
}

async function asJson(response: Response): Promise<any> {
  const body = await response.json().catch(() => null);
  if (!response.ok) {
    const message = body && body.message ? `${body.code}: ${body.message}`
      : `gateway returned ${response.status}`;
    throw new GatewayError(message, response.status);
  }
  return body;
}

export class GatewayClient {
  constructor(readonly baseUrl: string) {}

  private async request(path: string, init?: RequestInit): Promise<any> {
    let response: Response;
    try {
      response = await fetch(this.baseUrl + path, init);
    } catch (err) {
      throw new GatewayError(`gateway unreachable: ${String(err)}`);
    }
    return asJson(response);
  }

  health(): Promise<{ status: string }> {
    return this.request('/v1/health');
  }

  async createSession(): Promise<string> {
    const body = await this.request('/v1/sessions', { method: 'POST' });
    return body.session_id as string;
  }

  sendMessage(sessionId: string, text: string): Promise<TurnResponse> {
    return this.request(`/v1/sessions/${sessionId}/messages`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ text }),
    });
  }

  async getTrace(sessionId: string, traceId: string): Promise<TraceMessage[]> {
    const body = await this.request(`/v1/sessions/${sessionId}/traces/${traceId}`);
    return body.messages as TraceMessage[];
  }
}
