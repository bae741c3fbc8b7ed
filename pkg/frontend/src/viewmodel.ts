/** View models: reshape API payloads for display. Nothing here computes model
 * math; the only arithmetic is display rounding and the additivity echo that
 * re-sums the payload's own contribution fields as a consistency check. */

import {
  CateResponse,
  CounterfactualSet,
  DidResult,
  Features,
  PredictResponse,
} from "./types";

export interface ContributionBar {
  name: string;
  value: number;
  direction: "raises" | "lowers";
}

export interface AdviceCard {
  index: number;
  changes: Array<{ name: string; from: string; to: string }>;
  proximity: number;
  probability: number;
  valid: boolean;
}

export interface AdviceView {
  probability: number;
  gaugeText: string;
  predictedClass: number;
  classLabel: string;
  logit: number;
  intercept: number;
  bars: ContributionBar[];
  sumCheckOk: boolean;
  cards: AdviceCard[];
  bestEffort: boolean;
  diversity: number | null;
}

const fmt = (x: number, digits = 3): string => x.toFixed(digits);

export function buildAdviceView(
  predict: PredictResponse,
  query: Features,
  cfSet: CounterfactualSet | null,
  threshold: number,
): AdviceView {
  const bars: ContributionBar[] = Object.entries(predict.contributions)
    .map(([name, value]) => ({
      name,
      value,
      direction: value >= 0 ? ("raises" as const) : ("lowers" as const),
    }))
    .sort((a, b) => Math.abs(b.value) - Math.abs(a.value));
  const sum = predict.intercept + bars.reduce((acc, b) => acc + b.value, 0);
  const cards: AdviceCard[] = (cfSet?.items ?? []).map((item, index) => ({
    index,
    changes: item.changed.map((name) => ({
      name,
      from: displayValue(query[name]),
      to: displayValue(item.features[name]),
    })),
    proximity: item.proximity,
    probability: item.probability,
    valid: item.validity,
  }));
  return {
    probability: predict.probability,
    gaugeText: fmt(predict.probability),
    predictedClass: predict.predicted_class,
    classLabel: predict.predicted_class === 1 ? "pest presence expected" : "pest absence expected",
    logit: predict.logit,
    intercept: predict.intercept,
    bars,
    sumCheckOk: Math.abs(sum - predict.logit) < 1e-6,
    cards,
    bestEffort: cfSet?.best_effort ?? false,
    diversity: cfSet ? cfSet.diversity : null,
  };
}

export function displayValue(v: unknown): string {
  if (typeof v === "number") {
    return Number.isInteger(v) ? String(v) : v.toFixed(3);
  }
  return String(v);
}

export interface ZoneRow {
  zone: string;
  att: string;
  nTreated: number;
  nControl: number;
}

export interface EvaluationView {
  att: string;
  ciLow: string;
  ciHigh: string;
  se: string;
  nTreated: number;
  nControl: number;
  pretrendP: string;
  pretrendWarning: boolean;
  zoneRows: ZoneRow[];
  excludedZones: number[];
}

export function buildEvaluationView(did: DidResult): EvaluationView {
  const rows = Object.entries(did.per_zone).map(([zone, entry]) => ({
    zone,
    att: fmt(entry.att, 2),
    nTreated: entry.n_treated,
    nControl: entry.n_control,
  }));
  rows.sort((a, b) => a.zone.localeCompare(b.zone));
  return {
    att: fmt(did.att, 2),
    ciLow: fmt(did.ci95[0], 2),
    ciHigh: fmt(did.ci95[1], 2),
    se: fmt(did.se, 2),
    nTreated: did.n_treated,
    nControl: did.n_control,
    pretrendP: did.pretrend_p === null ? "untestable" : fmt(did.pretrend_p),
    pretrendWarning: did.pretrend_p !== null && did.pretrend_p < 0.05,
    zoneRows: rows,
    excludedZones: did.excluded_zones,
  };
}

export interface CateView {
  effect: string;
  treatment: string;
  learner: string;
  reading: string;
}

export function buildCateView(res: CateResponse): CateView {
  const direction = res.effect < 0 ? "fewer" : "more";
  return {
    effect: fmt(res.effect, 2),
    treatment: res.treatment,
    learner: res.learner,
    reading: `${fmt(Math.abs(res.effect), 2)} ${direction} moths next week under ${res.treatment}=1`,
  };
}
