/** Wire types mirroring the review service's JSON payloads. */

export type RatingValue = 'Good' | 'Normal' | 'Bad';
export type Aspect = 'accuracy' | 'relevance' | 'practicality';

export const ASPECTS: Aspect[] = ['accuracy', 'relevance', 'practicality'];
export const RATING_VALUES: RatingValue[] = ['Good', 'Normal', 'Bad'];

export interface TechniqueClaim {
  id: string;
  name: string;
  reason?: string | null;
}

export interface MappingWire {
  cve_id: string;
  exploitation_techniques: TechniqueClaim[];
  primary_impacts: TechniqueClaim[];
  secondary_impacts: TechniqueClaim[];
}

export interface OffenseWire {
  category: string;
  claim_or_fragment: string;
  kind: 'unknown_id' | 'name_mismatch' | 'bad_format';
}

export interface ValidationWire {
  status: 'valid' | 'hallucinated' | 'malformed';
  offenses: OffenseWire[];
}

export interface AffectedWire {
  vendor: string;
  product: string;
  versions: string[];
}

export interface CveWire {
  cve_id: string;
  description: string;
  affected: AffectedWire[];
  published_year: number;
}

export interface RetrievedWire {
  rank: number;
  technique_id: string;
  name: string;
  score: number;
}

export interface RatingWire {
  accuracy: RatingValue;
  relevance: RatingValue;
  practicality: RatingValue;
  rater_id: string;
  rated_at: string;
}

export interface RecordWire {
  cve_id: string;
  cve: CveWire;
  mapping: MappingWire | null;
  validation: ValidationWire;
  lifecycle: 'raw' | 'accurate' | 'curated' | 'rejected';
  raw_output: string;
  retrieved: RetrievedWire[];
  mode: string;
  top_n: number;
  rating: RatingWire | null;
  generated_at: string;
}

export interface QueueWire {
  status: string;
  count: number;
  items: RecordWire[];
}

export interface TierCountsWire {
  cve_count: number;
  raw: number;
  accurate: number;
  curated: number;
}

export interface AccountingWire {
  per_year: Record<string, TierCountsWire>;
  totals: TierCountsWire;
}

export interface TechniqueWire {
  id: string;
  name: string;
  description: string;
  tactics: string[];
  is_subtechnique: boolean;
  parent_id: string | null;
  revoked_or_deprecated: boolean;
}

/** Matches the technique id grammar enforced server-side (T#### or T####.###). */
export const TECHNIQUE_ID_RE = /^T\d{4}(\.\d{3})?$/;
