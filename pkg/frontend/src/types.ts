/** Payload shapes of the advisor service. The UI does no model math: every
 * number on screen traces back to one of these fields. */

export type FeatureValue = number | string;
export type Features = Record<string, FeatureValue>;

export interface FeatureMeta {
  kind: "continuous" | "categorical";
  immutable: boolean;
  note: string;
  bounds?: [number, number];
  step?: number;
  levels?: string[];
}

export interface Meta {
  feature_order: string[];
  features: Record<string, FeatureMeta>;
  immutable: string[];
  threshold: number;
  provenance: { config_hash: string; data_hash: string };
}

export interface PredictResponse {
  probability: number;
  logit: number;
  intercept: number;
  contributions: Record<string, number>;
  predicted_class: number;
  unseen_levels: string[];
}

export interface CounterfactualItem {
  features: Features;
  changed: string[];
  proximity: number;
  validity: boolean;
  probability: number;
}

export interface CounterfactualSet {
  query: Features;
  target_class: number;
  items: CounterfactualItem[];
  diversity: number;
  best_effort: boolean;
}

export interface DidResult {
  att: number;
  se: number;
  ci95: [number, number];
  pretrend_stat: number | null;
  pretrend_p: number | null;
  n_treated: number;
  n_control: number;
  per_zone: Record<string, { att: number; n_treated: number; n_control: number }>;
  excluded_zones: number[];
}

export interface GlobalFeature {
  name: string;
  kind: string;
  importance: number;
  bins: Array<[number | string, number | string, number]>;
}

export interface GlobalReport {
  features: GlobalFeature[];
}

export interface CateResponse {
  effect: number;
  treatment: string;
  learner: string;
}

export function isPredictResponse(doc: unknown): doc is PredictResponse {
  const d = doc as PredictResponse;
  return (
    typeof d === "object" && d !== null &&
    typeof d.probability === "number" &&
    typeof d.logit === "number" &&
    typeof d.intercept === "number" &&
    typeof d.contributions === "object"
  );
}

export function isMeta(doc: unknown): doc is Meta {
  const d = doc as Meta;
  return (
    typeof d === "object" && d !== null &&
    Array.isArray(d.feature_order) &&
    typeof d.features === "object" &&
    typeof d.threshold === "number"
  );
}
