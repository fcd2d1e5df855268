// Wire types for the gateway API. The UI renders these values verbatim and
// never computes scores of its own.

export interface ScoreRow {
  'Transaction': string;
  'Probability': number;
  'Label': 'normal' | 'anomalous';
  'Risk Band': 'low' | 'moderate' | 'high';
}

export interface TurnResponse {
  reply: string;
  scores: ScoreRow[];
  clusters: string[];
  trace_id: string;
  error: string | null;
}

export interface FeatureRow {
  'Name': string;
  'Value': number;
  'Contribution': number;
  'Comparator': string;
}

export interface EvidenceDoc {
  'Transaction': string;
  'Probability': number;
  'Risk Band': string;
  'Top Features': FeatureRow[];
  'Counterparty Verified': boolean;
  'Off Peak': boolean;
}

export interface GroundingEntry {
  'Clause': string;
  'Features': string[];
}

export interface TraceMessage {
  'Trace': string;
  'Session': string;
  'Turn': number;
  'Stage': 'parse' | 'clarify' | 'detect' | 'explain' | 'refine';
  'Schema Version': number;
  'Timestamp': string;
  'Duration Ms': number;
  'Annotations': string[];
  'Payload': Record<string, unknown>;
}

export interface CompletedTurn {
  userText: string;
  reply: string;
  scores: ScoreRow[];
  clusters: string[];
  traceId: string;
  error: string | null;
  stages: TraceMessage[];
}
