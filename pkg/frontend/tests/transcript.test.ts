// Transcript state logic: reducers, chips, numeral extraction.

import { describe, expect, it } from 'vitest';

import {
  beginTurn,
  completeTurn,
  emptyTranscript,
  failTurn,
  lastScoredTurn,
  numericTokens,
  payloadNumbers,
  refinementChips,
} from '../src/transcript';
import type { CompletedTurn, TraceMessage } from '../src/types';

function message(stage: TraceMessage['Stage']): TraceMessage {
  return {
    Trace: 't0-x', Session: 's', Turn: 0, Stage: stage, 'Schema Version': 1,
    Timestamp: '2024-12-30T12:00:00+00:00', 'Duration Ms': 1.0,
    Annotations: [], Payload: {},
  };
}

function turn(overrides: Partial<CompletedTurn> = {}): CompletedTurn {
  return {
    userText: 'q', reply: 'r', scores: [], clusters: [], traceId: 't0-x',
    error: null, stages: [message('parse'), message('detect'), message('explain')],
    ...overrides,
  };
}

describe('transcript reducers', () => {
  it('keeps the draft on failure so retry needs no retyping', () => {
    let state = emptyTranscript('s1');
    state = beginTurn(state, 'my draft');
    state = failTurn(state, 'gateway unreachable');
    expect(state.draft).toBe('my draft');
    expect(state.banner).toContain('unreachable');
    expect(state.inFlight).toBe(false);
  });

  it('flags a pending clarification from the trace stages', () => {
    let state = emptyTranscript('s1');
    state = beginTurn(state, 'past week?');
    state = completeTurn(state, turn({
      reply: 'Which wallet?',
      stages: [message('parse'), message('clarify')],
    }));
    expect(state.pendingClarification).toBe('Which wallet?');
    state = beginTurn(state, 'wallet 1Abc');
    state = completeTurn(state, turn({ reply: 'done' }));
    expect(state.pendingClarification).toBeNull();
  });

  it('locks to one in-flight turn per session', () => {
    let state = emptyTranscript('s1');
    state = beginTurn(state, 'x');
    expect(state.inFlight).toBe(true);
    state = completeTurn(state, turn());
    expect(state.inFlight).toBe(false);
  });

  it('finds the last scored turn', () => {
    let state = emptyTranscript('s1');
    state = completeTurn(state, turn({ traceId: 'a' }));
    const scored = turn({
      traceId: 'b',
      scores: [{ Transaction: 't1', Probability: 0.9, Label: 'anomalous', 'Risk Band': 'high' }],
    });
    state = completeTurn(state, scored);
    expect(lastScoredTurn(state)?.traceId).toBe('b');
  });
});

describe('refinement chips', () => {
  it('offers nothing before a scored turn', () => {
    expect(refinementChips(emptyTranscript('s'))).toEqual([]);
  });

  it('derives cluster chips from the result set plus the static vocabulary', () => {
    let state = emptyTranscript('s');
    state = completeTurn(state, turn({
      scores: [{ Transaction: 't1', Probability: 0.7, Label: 'anomalous', 'Risk Band': 'moderate' }],
      clusters: ['exchange', 'mixer'],
    }));
    const chips = refinementChips(state);
    expect(chips).toContain('only exchange-linked clusters');
    expect(chips).toContain('only mixer-linked clusters');
    expect(chips).toContain('only high-value ones');
  });
});

describe('numeric token accounting', () => {
  it('extracts standalone numerals only', () => {
    const tokens = numericTokens(
      'score (0.84) due to transfers exceeding the 95th-percentile value; see tx000123.',
    );
    expect(tokens).toEqual(['0.84', '95']);
  });

  it('collects payload numbers in displayable forms', () => {
    const allowed = payloadNumbers({
      reply: 'score (0.84)',
      scores: [{ Probability: 0.8412345678 }],
    });
    expect(allowed.has('0.84')).toBe(true);
    expect(allowed.has('0.8412345678')).toBe(true);
  });
});
