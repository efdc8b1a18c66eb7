import { describe, expect, it } from "vitest";

import { ApiClient, PanelRunner } from "../src/api";
import { drillKeyRow, drillTimeBucket, finerBin, splitKey } from "../src/drilldown";
import { buildQuery, defaultMode, formatStamp, FormError, parseStamp } from "../src/flowql";
import { buildHeatmap, normalizeCell } from "../src/heatmap";
import { decodeTrail, encodeTrail, Session } from "../src/session";
import { Crumb, FormState, ResultRow } from "../src/types";

const DAY = "2024-03-14";

function baseForm(): FormState {
  return {
    kind: "pop",
    counter: "byte",
    proto: "any",
    site: "ANY",
    binMinutes: 60,
    ranges: [{ from: `${DAY} 00:00`, to: `${DAY} 23:59` }],
    features: { src_port: "80|16" },
  };
}

/** Deterministic fake server: rows derive from the query text alone. */
function fakeFetch(): (url: string, init?: RequestInit) => Promise<Response> {
  return async (url: string) => {
    const q = decodeURIComponent(url.split("q=")[1] ?? "");
    const rows: ResultRow[] = [0, 1, 2].map((i) => ({
      bin: 1710374400 + i * 900,
      site: "ALL",
      key: `${q.length}|16`,
      flows: q.length + i,
      packets: 2 * (q.length + i),
      bytes: 100 * (q.length + i),
      exact: true,
    }));
    const body = JSON.stringify({
      rows,
      meta: {
        elapsed_ms: 1.0,
        rows: rows.length,
        counter: "bytes",
        trees_fetched: 1,
        merges: 0,
        truncated: false,
        warnings: [],
      },
    });
    return new Response(body, { status: 200, headers: { "content-type": "application/json" } });
  };
}

describe("query builder", () => {
  it("composes the documented query shape", () => {
    const q = buildQuery(baseForm());
    expect(q).toBe(
      "SELECT pop(any,byte,bin60) FROM (time 2024-03-14 00:00 to 2024-03-14 23:59) " +
        "WHERE site_id=ANY and src_port=80|16",
    );
  });

  it("always emits a parseable site and feature section", () => {
    const form = baseForm();
    form.site = "ITR-8|2";
    form.features = { src_ip: "10.0.0.0|8", dst_port: "ANY" };
    const q = buildQuery(form);
    expect(q).toContain("site_id=ITR-8|2");
    expect(q).toContain("src_ip=10.0.0.0|8 and dst_port=ANY");
  });

  it("rejects invalid state before submission", () => {
    const empty = { ...baseForm(), ranges: [{ from: `${DAY} 10:00`, to: `${DAY} 10:00` }] };
    expect(() => buildQuery(empty)).toThrow(FormError);
    const badMask = { ...baseForm(), features: { src_port: "80|29" } };
    expect(() => buildQuery(badMask)).toThrow(/mask/);
    const badBin = { ...baseForm(), binMinutes: 25 };
    expect(() => buildQuery(badBin)).toThrow(/divide/);
    const noFeature = { ...baseForm(), features: {} };
    expect(() => buildQuery(noFeature)).toThrow(/feature/);
    const hc = { ...baseForm(), kind: "hc" as const, k: 5, binMinutes: undefined };
    expect(() => buildQuery(hc)).toThrow(/two ranges/);
  });

  it("timestamps round-trip through the minute grid", () => {
    const epoch = parseStamp(`${DAY} 01:15`);
    expect(formatStamp(epoch)).toBe(`${DAY} 01:15`);
  });

  it("suggests a view mode per query shape", () => {
    expect(defaultMode(baseForm())).toBe("timeseries");
    const matrix: FormState = {
      ...baseForm(),
      kind: "above",
      threshold: 5,
      binMinutes: undefined,
      features: { src_ip: "ANY", dst_ip: "ANY" },
    };
    expect(defaultMode(matrix)).toBe("heatmap");
    const table = { ...baseForm(), kind: "top" as const, k: 10, binMinutes: undefined };
    expect(defaultMode(table)).toBe("table");
  });
});

describe("drill-down contract", () => {
  it("an hour bucket of a bin60 chart becomes exactly the bin15 query", async () => {
    const client = new ApiClient("", fakeFetch());
    const form = baseForm();
    const q60 = buildQuery(form);
    await client.query(q60);

    const bucketStart = parseStamp(`${DAY} 13:00`);
    const drilled = drillTimeBucket(form, bucketStart);
    expect(drilled.binMinutes).toBe(15);
    const q15 = buildQuery(drilled);
    await client.query(q15);

    expect(q15).toBe(
      "SELECT pop(any,byte,bin15) FROM (time 2024-03-14 13:00 to 2024-03-14 13:59) " +
        "WHERE site_id=ANY and src_port=80|16",
    );
    expect(client.requestLog).toEqual([
      `/api/v1/query?q=${encodeURIComponent(q60)}`,
      `/api/v1/query?q=${encodeURIComponent(q15)}`,
    ]);
  });

  it("walks the finer-bin ladder", () => {
    expect(finerBin(1440)).toBe(60);
    expect(finerBin(60)).toBe(15);
    expect(finerBin(15)).toBe(1);
    expect(finerBin(48)).toBe(12);
  });

  it("a key row click narrows to the clicked prefix, one level deeper", () => {
    const form: FormState = {
      ...baseForm(),
      kind: "top",
      k: 10,
      binMinutes: undefined,
      features: { src_ip: "ANY" },
    };
    const { form: next, targetLevel } = drillKeyRow(form, ["src_ip"], "10.0.0.0|8");
    expect(next.features.src_ip).toBe("10.0.0.0|8");
    expect(targetLevel).toBe(9);
    expect(buildQuery(next)).toContain("src_ip=10.0.0.0|8");
    expect(splitKey("10.0.0.0|8,ANY")).toEqual([
      { text: "10.0.0.0|8", mask: 8 },
      { text: "ANY", mask: 0 },
    ]);
  });
});

describe("breadcrumb session", () => {
  it("replaying the trail reproduces every view byte-identically", async () => {
    const client = new ApiClient("", fakeFetch());
    const session = new Session(client);
    const crumbs: Crumb[] = [
      { query: buildQuery(baseForm()), mode: "timeseries" },
      {
        query: buildQuery(drillTimeBucket(baseForm(), parseStamp(`${DAY} 02:00`))),
        mode: "timeseries",
      },
    ];
    const v1 = await session.visit(crumbs[0]);
    const v2 = await session.visit(crumbs[1]);

    const replayClient = new ApiClient("", fakeFetch());
    const replaySession = new Session(replayClient);
    const trail = decodeTrail(encodeTrail(session.trail));
    const last = await replaySession.replay(trail);
    expect(trail).toEqual(session.trail);
    expect(last).toEqual(v2);
    const first = await replaySession.materialize(trail[0]);
    expect(first).toEqual(v1);
  });

  it("back-navigation re-materializes the previous view", async () => {
    const client = new ApiClient("", fakeFetch());
    const session = new Session(client);
    const a = await session.visit({ query: buildQuery(baseForm()), mode: "table" });
    await session.visit({ query: buildQuery(baseForm()) + " ", mode: "table" });
    const back = await session.back();
    expect(back).toEqual(a);
    expect(session.trail.length).toBe(1);
  });

  it("fragment codec is url-safe and lossless", () => {
    const trail: Crumb[] = [
      { query: "SELECT top(10,any,byte) FROM (time 2024-03-14 00:00 to 2024-03-14 23:59) WHERE site_id=ANY and src_port=ANY", mode: "table", targetLevel: 9 },
    ];
    const fragment = encodeTrail(trail);
    expect(fragment).not.toMatch(/[+/=]/);
    expect(decodeTrail(fragment)).toEqual(trail);
    expect(decodeTrail("")).toEqual([]);
  });
});

describe("heatmap normalization", () => {
  it("matches counter / 2^(32-src_mask) / 2^(32-dst_mask) on a 3-cell fixture", () => {
    const rows: ResultRow[] = [
      { bin: 0, site: "ALL", key: "10.0.0.0|8,20.0.0.0|8", flows: 1, packets: 1, bytes: Math.pow(2, 48), exact: true },
      { bin: 0, site: "ALL", key: "10.1.0.0|16,20.1.0.0|16", flows: 1, packets: 1, bytes: Math.pow(2, 32), exact: true },
      { bin: 0, site: "ALL", key: "10.1.2.3|32,20.1.2.3|32", flows: 1, packets: 1, bytes: 7, exact: true },
    ];
    const model = buildHeatmap(rows, "byte");
    expect(model.cells).toHaveLength(3);
    const byKey = Object.fromEntries(model.cells.map((c) => [`${c.src}>${c.dst}`, c]));
    // /8 x /8 spans 2^24 x 2^24 addresses: raw / 2^48
    expect(byKey["10.0.0.0/8>20.0.0.0/8"].normalized).toBe(1);
    expect(byKey["10.1.0.0/16>20.1.0.0/16"].normalized).toBe(1);
    expect(byKey["10.1.2.3/32>20.1.2.3/32"].normalized).toBe(7);
    expect(normalizeCell(Math.pow(2, 48), 8, 8)).toBe(1);
    expect(model.maxNormalized).toBe(7);
  });

  it("single pair gives a one-cell grid", () => {
    const rows: ResultRow[] = [
      { bin: 0, site: "ALL", key: "1.2.3.4|32,5.6.7.8|32", flows: 3, packets: 3, bytes: 30, exact: true },
    ];
    const model = buildHeatmap(rows, "flow");
    expect(model.srcLabels).toEqual(["1.2.3.4/32"]);
    expect(model.dstLabels).toEqual(["5.6.7.8/32"]);
    expect(model.cells[0].raw).toBe(3);
  });
});

describe("panel cancellation", () => {
  it("a newer submission aborts the stale in-flight request", async () => {
    const seenSignals: AbortSignal[] = [];
    const hangingFetch = (url: string, init?: RequestInit) =>
      new Promise<Response>((resolve, reject) => {
        const signal = init?.signal as AbortSignal;
        seenSignals.push(signal);
        signal.addEventListener("abort", () => reject(new DOMException("aborted", "AbortError")));
        if (seenSignals.length > 1) {
          resolve(new Response(JSON.stringify({ rows: [], meta: { elapsed_ms: 0, rows: 0, counter: "bytes", trees_fetched: 0, merges: 0, truncated: false, warnings: [] } }), { status: 200 }));
        }
      });
    const client = new ApiClient("", hangingFetch);
    const runner = new PanelRunner(client);
    const first = runner.run("SELECT 1").catch((err) => err);
    const second = await runner.run("SELECT 2");
    expect(second.rows).toEqual([]);
    expect(seenSignals[0].aborted).toBe(true);
    expect(seenSignals[1].aborted).toBe(false);
    const firstErr = await first;
    expect(String(firstErr)).toMatch(/abort/i);
  });
});
