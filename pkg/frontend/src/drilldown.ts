/** Drill-down transitions: each click derives the next, finer query. */

import { formatStamp } from "./flowql";
import { FeatureName, FormState } from "./types";

/** Next finer answer-bin width in minutes. */
export const FINER_BIN: Record<number, number> = {
  1440: 60,
  60: 15,
  15: 1,
};

export function finerBin(minutes: number): number {
  const next = FINER_BIN[minutes];
  if (next !== undefined) return next;
  // fall back to a quarter of the width, floored to a whole minute
  return Math.max(1, Math.floor(minutes / 4));
}

/**
 * Clicking one bucket of a binned time series re-issues the query with the
 * next finer bin width, over exactly that bucket.
 */
export function drillTimeBucket(form: FormState, bucketStart: number): FormState {
  if (form.binMinutes === undefined) {
    throw new Error("not a binned view");
  }
  const width = form.binMinutes * 60;
  return {
    ...form,
    features: { ...form.features },
    binMinutes: finerBin(form.binMinutes),
    ranges: [
      {
        from: formatStamp(bucketStart),
        to: formatStamp(bucketStart + width - 60), // minute-inclusive end
      },
    ],
  };
}

interface ParsedComponent {
  text: string;
  mask: number;
}

/** Split a rendered key into per-feature components ("ANY" has mask 0). */
export function splitKey(keyText: string): ParsedComponent[] {
  return keyText.split(",").map((part) => {
    if (part === "ANY") return { text: part, mask: 0 };
    const mask = Number(part.split("|")[1] ?? 0);
    return { text: part, mask };
  });
}

/**
 * Clicking a key row narrows the form to that key and asks for the level
 * one mask deeper: the node's children.  The deeper level is a display
 * filter (`targetLevel`), the WHERE clause carries the clicked prefixes.
 */
export function drillKeyRow(
  form: FormState,
  namedFeatures: FeatureName[],
  keyText: string,
): { form: FormState; targetLevel: number } {
  const parts = splitKey(keyText);
  if (parts.length !== namedFeatures.length) {
    throw new Error(
      `key ${keyText} has ${parts.length} components, form names ${namedFeatures.length}`,
    );
  }
  const features = { ...form.features };
  let level = 0;
  for (let i = 0; i < parts.length; i++) {
    features[namedFeatures[i]] = parts[i].text;
    level = Math.max(level, parts[i].mask);
  }
  return { form: { ...form, kind: "*", features }, targetLevel: level + 1 };
}
