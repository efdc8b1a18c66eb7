/** Client-side mirror of the query grammar: form state in, query text out.
 *
 * The builder refuses to produce an invalid query, so every string shipped
 * to the API parses; validation errors surface inline before submission.
 */

import { FeatureName, FormState, TimeRange } from "./types";

export const FEATURES: FeatureName[] = ["src_ip", "dst_ip", "src_port", "dst_port"];

const DATE_TIME = /^\d{4}-\d{2}-\d{2} \d{1,2}:\d{2}$/;
const IP_VALUE = /^\d{1,3}\.\d{1,3}\.\d{1,3}\.\d{1,3}\|\d{1,2}$/;
const PORT_VALUE = /^\d{1,5}\|\d{1,2}$/;
const SITE_VALUE = /^(ANY|\d+|ITR|ITR-\d+\|\d+)$/i;

export class FormError extends Error {
  constructor(public field: string, message: string) {
    super(message);
  }
}

export function parseStamp(text: string): number {
  if (!DATE_TIME.test(text)) {
    throw new FormError("time", `bad timestamp ${text} (want YYYY-MM-DD hh:mm)`);
  }
  const ms = Date.parse(text.replace(" ", "T") + ":00Z");
  if (Number.isNaN(ms)) {
    throw new FormError("time", `unreadable timestamp ${text}`);
  }
  return ms / 1000;
}

export function formatStamp(epoch: number): string {
  const d = new Date(epoch * 1000);
  const pad = (n: number) => String(n).padStart(2, "0");
  return (
    `${d.getUTCFullYear()}-${pad(d.getUTCMonth() + 1)}-${pad(d.getUTCDate())} ` +
    `${pad(d.getUTCHours())}:${pad(d.getUTCMinutes())}`
  );
}

function validateRange(range: TimeRange): void {
  const from = parseStamp(range.from);
  const to = parseStamp(range.to);
  if (from >= to) {
    throw new FormError("time", `empty range ${range.from} .. ${range.to}`);
  }
}

function validateFeature(name: FeatureName, value: string): void {
  const v = value.trim();
  if (v.toUpperCase() === "ANY") return;
  if (name === "src_ip" || name === "dst_ip") {
    if (!IP_VALUE.test(v)) {
      throw new FormError(name, `${name} wants a.b.c.d|mask or ANY`);
    }
    const mask = Number(v.split("|")[1]);
    if (mask > 32) throw new FormError(name, "IP mask above 32");
    return;
  }
  if (!PORT_VALUE.test(v) && !/^\d{1,5}$/.test(v)) {
    throw new FormError(name, `${name} wants port|mask, a port, or ANY`);
  }
  const [port, mask] = v.includes("|") ? v.split("|").map(Number) : [Number(v), 16];
  if (port > 65535) throw new FormError(name, "port above 65535");
  if (mask > 16) throw new FormError(name, "port mask above 16");
}

/** FormState -> FlowQL text; throws FormError on anything unsendable. */
export function buildQuery(form: FormState): string {
  const args: string[] = [];
  if (form.kind === "top" || form.kind === "hc") {
    if (!form.k || form.k < 1) throw new FormError("k", "k must be at least 1");
    args.push(String(form.k));
  } else if (form.kind === "above") {
    if (form.threshold === undefined || form.threshold < 0) {
      throw new FormError("threshold", "threshold must be >= 0");
    }
    args.push(String(form.threshold));
  } else if (form.kind === "hhh") {
    if (!form.percent || form.percent <= 0 || form.percent >= 100) {
      throw new FormError("percent", "percent must be in (0, 100)");
    }
    args.push(String(form.percent));
  }
  args.push(form.proto);
  args.push(form.counter);
  if (form.binMinutes !== undefined) {
    if (form.binMinutes < 1) throw new FormError("bin", "bin width below one minute");
    args.push(`bin${form.binMinutes}`);
    for (const range of form.ranges) {
      const width = form.binMinutes * 60;
      const span = parseStamp(range.to) + 60 - parseStamp(range.from);
      if (span % width !== 0) {
        throw new FormError("bin", `bin${form.binMinutes} does not divide the range`);
      }
    }
  }
  if (form.kind === "hc" && form.ranges.length !== 2) {
    throw new FormError("time", "heavy changers need exactly two ranges");
  }
  if (form.ranges.length === 0) {
    throw new FormError("time", "at least one time range required");
  }
  form.ranges.forEach(validateRange);
  const site = form.site.trim() || "ANY";
  if (!SITE_VALUE.test(site)) {
    throw new FormError("site", "site is ANY, a number, ITR or ITR-x|n");
  }
  const atoms: string[] = [`site_id=${site.toUpperCase() === "ANY" ? "ANY" : site}`];
  let named = 0;
  for (const feature of FEATURES) {
    const value = form.features[feature];
    if (value === undefined || value.trim() === "") continue;
    validateFeature(feature, value);
    named += 1;
    const v = value.trim().toUpperCase() === "ANY" ? "ANY" : value.trim();
    atoms.push(`${feature}=${v}`);
  }
  if (named === 0) {
    throw new FormError("features", "name at least one flow feature (ANY is fine)");
  }
  const ranges = form.ranges.map((r) => `(time ${r.from} to ${r.to})`).join("");
  return `SELECT ${form.kind}(${args.join(",")}) FROM ${ranges} WHERE ${atoms.join(" and ")}`;
}

/** Suggested rendering for a query kind. */
export function defaultMode(form: FormState): "timeseries" | "table" | "heatmap" {
  if (form.binMinutes !== undefined) return "timeseries";
  const namesIpPair =
    form.features.src_ip !== undefined && form.features.dst_ip !== undefined;
  if ((form.kind === "above" || form.kind === "*") && namesIpPair) return "heatmap";
  return "table";
}
