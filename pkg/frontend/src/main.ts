/** App wiring: form controls compose a query, results render into the
 * panel, clicks drill down, and the breadcrumb trail lives in the URL. */

import { ApiClient, ApiError, PanelRunner } from "./api";
import { drillKeyRow, drillTimeBucket } from "./drilldown";
import { buildQuery, defaultMode, FormError, FEATURES } from "./flowql";
import { renderView } from "./render";
import { decodeTrail, Session } from "./session";
import { Counter, FormState, SelectKind, ViewModel } from "./types";

const $ = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
};

const client = new ApiClient("");
const session = new Session(client);
const runner = new PanelRunner(client);

let currentForm: FormState | null = null;
let currentView: ViewModel | null = null;

function readForm(): FormState {
  const kind = ($("kind") as HTMLSelectElement).value as SelectKind;
  const form: FormState = {
    kind,
    counter: ($("counter") as HTMLSelectElement).value as Counter,
    proto: ($("proto") as HTMLSelectElement).value as FormState["proto"],
    site: ($("site") as HTMLInputElement).value || "ANY",
    ranges: [
      {
        from: ($("from") as HTMLInputElement).value,
        to: ($("to") as HTMLInputElement).value,
      },
    ],
    features: {},
  };
  const second = ($("from2") as HTMLInputElement).value;
  const second_to = ($("to2") as HTMLInputElement).value;
  if (second && second_to) form.ranges.push({ from: second, to: second_to });
  const numeric = ($("knum") as HTMLInputElement).value;
  if (kind === "top" || kind === "hc") form.k = Number(numeric || "10");
  if (kind === "above") form.threshold = Number(numeric || "0");
  if (kind === "hhh") form.percent = Number(numeric || "1");
  const bin = ($("bin") as HTMLInputElement).value;
  if (bin) form.binMinutes = Number(bin);
  for (const feature of FEATURES) {
    const value = ($(feature) as HTMLInputElement).value.trim();
    if (value) form.features[feature] = value;
  }
  return form;
}

function showError(message: string): void {
  $("error").textContent = message;
}

function syncFragment(): void {
  window.location.hash = session.fragment();
}

async function runForm(form: FormState, targetLevel?: number): Promise<void> {
  let query: string;
  try {
    query = buildQuery(form);
  } catch (err) {
    showError(err instanceof FormError ? `${err.field}: ${err.message}` : String(err));
    return;
  }
  showError("");
  ($("query-text") as HTMLInputElement).value = query;
  const mode = targetLevel !== undefined ? "table" : defaultMode(form);
  try {
    const view = await session.visit({ query, mode, targetLevel });
    currentForm = form;
    currentView = view;
    paint(view);
    syncFragment();
  } catch (err) {
    if (err instanceof ApiError) {
      showError(
        err.col ? `${err.message} (line ${err.line}, column ${err.col})` : err.message,
      );
    } else {
      showError(String(err));
    }
  }
}

function paint(view: ViewModel): void {
  const counter = (currentForm?.counter ?? "flow") as Counter;
  renderView($("panel"), view, counter, {
    onBucket: (binStart) => {
      if (!currentForm) return;
      void runForm(drillTimeBucket(currentForm, binStart));
    },
    onKey: (keyText) => {
      if (!currentForm) return;
      const named = FEATURES.filter((f) => currentForm!.features[f] !== undefined);
      try {
        const next = drillKeyRow(currentForm, named, keyText);
        void runForm(next.form, next.targetLevel);
      } catch (err) {
        showError(String(err));
      }
    },
    onCell: (src, dst) => {
      if (!currentForm) return;
      const form = {
        ...currentForm,
        features: {
          ...currentForm.features,
          src_ip: src.replace("/", "|"),
          dst_ip: dst.replace("/", "|"),
        },
      };
      void runForm(form);
    },
  });
  renderBreadcrumbs();
}

function renderBreadcrumbs(): void {
  const nav = $("crumbs");
  nav.replaceChildren();
  session.trail.forEach((crumb, i) => {
    const link = document.createElement("a");
    link.textContent = `${i + 1}`;
    link.title = crumb.query;
    link.href = "#";
    link.addEventListener("click", (ev) => {
      ev.preventDefault();
      void (async () => {
        session.trail = session.trail.slice(0, i + 1);
        const view = await session.materialize(crumb);
        currentView = view;
        paint(view);
        syncFragment();
      })();
    });
    nav.appendChild(link);
    nav.appendChild(document.createTextNode(" "));
  });
}

async function boot(): Promise<void> {
  $("run").addEventListener("click", () => void runForm(readForm()));
  $("back").addEventListener("click", () => {
    void (async () => {
      const view = await session.back();
      if (view) {
        currentView = view;
        paint(view);
        syncFragment();
      }
    })();
  });
  try {
    const sites = await client.sites();
    $("sites-hint").textContent = sites.length
      ? `known sites: ${sites.slice(0, 12).join(", ")}${sites.length > 12 ? ", ..." : ""}`
      : "store has no sites yet";
  } catch {
    $("sites-hint").textContent = "API unreachable";
  }
  const fragment = window.location.hash.slice(1);
  if (fragment) {
    try {
      const view = await session.replay(decodeTrail(fragment));
      if (view) {
        currentView = view;
        paint(view);
      }
    } catch (err) {
      showError(`could not replay shared session: ${err}`);
    }
  }
}

void boot();
