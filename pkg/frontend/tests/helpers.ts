// Shared test scaffolding: a fetch stub that replays recorded service
// exchanges, matched by deep JSON equality of the request body.

import type { PredictRequest, PredictResponse, SchemaDoc, Template } from "../src/types.js";

export function deepEqual(a: unknown, b: unknown): boolean {
  if (a === b) return true;
  if (typeof a !== typeof b || a === null || b === null) return false;
  if (Array.isArray(a) !== Array.isArray(b)) return false;
  if (typeof a !== "object") return false;
  const keysA = Object.keys(a as object).sort();
  const keysB = Object.keys(b as object).sort();
  if (!deepEqual(keysA, keysB) && (keysA.length !== keysB.length || keysA.some((k, i) => k !== keysB[i]))) {
    return false;
  }
  return keysA.every((k) =>
    deepEqual((a as Record<string, unknown>)[k], (b as Record<string, unknown>)[k]),
  );
}

export interface Exchange {
  request: PredictRequest;
  response: PredictResponse;
}

export function stubFetch(options: {
  schema?: SchemaDoc;
  templates?: Template[];
  exchanges?: Exchange[];
}): typeof fetch {
  const exchanges = options.exchanges ?? [];
  return (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    if (url.endsWith("/health")) {
      return new Response(JSON.stringify({ status: "ready", model_hash: "stub" }), { status: 200 });
    }
    if (url.endsWith("/schema")) {
      return new Response(JSON.stringify(options.schema ?? {}), { status: 200 });
    }
    if (url.endsWith("/templates")) {
      return new Response(JSON.stringify({ templates: options.templates ?? [] }), { status: 200 });
    }
    if (url.endsWith("/predict")) {
      const body = JSON.parse(String(init?.body ?? "{}")) as PredictRequest;
      const match = exchanges.find((e) => deepEqual(e.request, body));
      if (!match) {
        return new Response(
          JSON.stringify({ detail: [{ field: "", message: "no recorded exchange matches" }] }),
          { status: 400 },
        );
      }
      return new Response(JSON.stringify(match.response), { status: 200 });
    }
    return new Response("not found", { status: 404 });
  }) as typeof fetch;
}

export function hypoProbability(response: PredictResponse): number {
  return response.probabilities[response.class_names.indexOf("hypo")];
}
