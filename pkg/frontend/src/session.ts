/** Breadcrumb trail: the session is the list of issued queries.
 *
 * The trail round-trips through the URL fragment, so reloading a shared
 * link replays the same queries and reproduces the same views.
 */

import { ApiClient } from "./api";
import { Crumb, ViewModel } from "./types";

export function encodeTrail(trail: Crumb[]): string {
  const json = JSON.stringify(trail);
  // base64url keeps the fragment selectable and copy-safe
  return btoa(unescape(encodeURIComponent(json)))
    .replace(/\+/g, "-")
    .replace(/\//g, "_")
    .replace(/=+$/, "");
}

export function decodeTrail(fragment: string): Crumb[] {
  if (!fragment) return [];
  const b64 = fragment.replace(/-/g, "+").replace(/_/g, "/");
  const pad = b64 + "=".repeat((4 - (b64.length % 4)) % 4);
  const json = decodeURIComponent(escape(atob(pad)));
  const parsed = JSON.parse(json);
  if (!Array.isArray(parsed)) throw new Error("bad trail fragment");
  return parsed as Crumb[];
}

export class Session {
  trail: Crumb[] = [];

  constructor(private client: ApiClient) {}

  async visit(crumb: Crumb): Promise<ViewModel> {
    const view = await this.materialize(crumb);
    this.trail.push(crumb);
    return view;
  }

  /** Re-issue one crumb's query; the view is a pure function of the reply. */
  async materialize(crumb: Crumb): Promise<ViewModel> {
    const response = await this.client.query(crumb.query);
    return {
      query: crumb.query,
      mode: crumb.mode,
      rows: response.rows,
      meta: response.meta,
      targetLevel: crumb.targetLevel,
    };
  }

  /** Back-navigation: drop the newest crumb, re-materialize the previous. */
  async back(): Promise<ViewModel | null> {
    if (this.trail.length <= 1) return null;
    this.trail.pop();
    return await this.materialize(this.trail[this.trail.length - 1]);
  }

  /** Replay an entire trail (e.g. decoded from a shared URL). */
  async replay(trail: Crumb[]): Promise<ViewModel | null> {
    this.trail = [];
    let view: ViewModel | null = null;
    for (const crumb of trail) {
      view = await this.visit(crumb);
    }
    return view;
  }

  fragment(): string {
    return encodeTrail(this.trail);
  }
}
