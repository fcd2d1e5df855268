// Per-session transcript state. Pure data + reducers so the rendering layer
// stays dumb and the logic is unit-testable without a DOM.

import type { CompletedTurn } from './types';

export interface TranscriptState {
  sessionId: string;
  turns: CompletedTurn[];
  // At most one pending clarification prompt is shown after the turns.
  pendingClarification: string | null;
  inFlight: boolean;
  banner: string | null;
  draft: string;
}

export function emptyTranscript(sessionId: string): TranscriptState {
  return {
    sessionId,
    turns: [],
    pendingClarification: null,
    inFlight: false,
    banner: null,
    draft: '',
  };
}

export function beginTurn(state: TranscriptState, draft: string): TranscriptState {
  return { ...state, inFlight: true, banner: null, draft };
}

export function completeTurn(state: TranscriptState, turn: CompletedTurn): TranscriptState {
  const clarify = turn.stages.some((m) => m.Stage === 'clarify');
  return {
    ...state,
    turns: [...state.turns, turn],
    pendingClarification: clarify ? turn.reply : null,
    inFlight: false,
    banner: null,
    draft: '',
  };
}

export function failTurn(state: TranscriptState, message: string): TranscriptState {
  // The draft survives so the analyst can retry without retyping.
  return { ...state, inFlight: false, banner: message };
}

export function lastScoredTurn(state: TranscriptState): CompletedTurn | null {
  for (let i = state.turns.length - 1; i >= 0; i--) {
    if (state.turns[i].scores.length > 0) return state.turns[i];
  }
  return null;
}

const STATIC_CHIPS = ['only high-value ones', 'only incoming', 'only outgoing'];

export function refinementChips(state: TranscriptState): string[] {
  const last = state.turns.length ? state.turns[state.turns.length - 1] : null;
  if (!last || last.scores.length === 0) return [];
  const dynamic = last.clusters.map((c) => `only ${c}-linked clusters`);
  return [...dynamic, ...STATIC_CHIPS];
}

// All standalone numeric tokens in a rendered string; used to enforce that
// the UI never shows a number the API payload didn't supply.
export function numericTokens(text: string): string[] {
  const matches = text.matchAll(/(?<![A-Za-z0-9_.])(\d+(?:\.\d+)?)(?:st|nd|rd|th)?(?![A-Za-z0-9_])(?!\.\d)/g);
  return Array.from(matches, (m) => m[1]);
}

export function payloadNumbers(payload: unknown): Set<string> {
  const out = new Set<string>();
  const walk = (value: unknown): void => {
    if (typeof value === 'number') {
      out.add(String(value));
      out.add(value.toFixed(2));
      out.add(String(Math.round(value * 100)));  // percentile phrasing
      if (Number.isInteger(value)) out.add(String(value));
    } else if (typeof value === 'string') {
      for (const token of numericTokens(value)) out.add(token);
    } else if (Array.isArray(value)) {
      value.forEach(walk);
    } else if (value && typeof value === 'object') {
      Object.values(value).forEach(walk);
    }
  };
  walk(payload);
  return out;
}
