/** Shared test plumbing: fixture-backed fetch doubles that record exactly
 * which payloads they served, so tests can assert the DOM equals the payload. */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import type { FetchLike } from "../src/api";

const FIXTURES_DIR = join(dirname(fileURLToPath(import.meta.url)), "..", "src", "fixtures");

export function fixtureText(name: string): string {
  return readFileSync(join(FIXTURES_DIR, name), "utf-8");
}

export function fixtureJson<T>(name: string): T {
  return JSON.parse(fixtureText(name)) as T;
}

export interface RecordedCall {
  method: string;
  path: string;
  body: unknown;
  payload: unknown;
}

interface ParsedRequest {
  method: string;
  path: string;
  body: Record<string, unknown> | undefined;
}

function parseRequest(input: string, init?: RequestInit): ParsedRequest {
  return {
    method: init?.method ?? "GET",
    path: input,
    body: init?.body ? (JSON.parse(String(init.body)) as Record<string, unknown>) : undefined,
  };
}

const GET_FIXTURES: Record<string, string> = {
  "/runs": "runs.json",
  "/runs/olaparib-demo": "run_olaparib.json",
  "/runs/olaparib-demo/prisma": "prisma_olaparib.json",
  "/runs/olaparib-demo/audit": "audit_olaparib.json",
};

/** Fixture file for a what-if POST body, mirroring scripts/record-fixtures.mjs. */
function whatIfFixtureName(kind: "weights" | "meta", body: Record<string, unknown>): string {
  const gamma = body.gamma as number;
  const floor = body.floor as number;
  const mode = body.pmax_mode as string;
  return `${kind}_g${gamma}_f${floor}_${mode}.json`;
}

function fixtureFor(request: ParsedRequest): string {
  if (request.method === "GET") {
    const name = GET_FIXTURES[request.path];
    if (!name) {
      throw new Error(`no fixture recorded for GET ${request.path}`);
    }
    return name;
  }
  if (request.method === "POST" && request.body) {
    if (request.path.endsWith("/weights")) {
      return whatIfFixtureName("weights", request.body);
    }
    if (request.path.endsWith("/meta")) {
      return whatIfFixtureName("meta", request.body);
    }
  }
  throw new Error(`no fixture recorded for ${request.method} ${request.path}`);
}

function jsonResponse(text: string): Response {
  return new Response(text, {
    status: 200,
    headers: { "Content-Type": "application/json" },
  });
}

/** Serves recorded payloads and logs every exchange. Unknown requests reject,
 * so a test fails loudly if the UI asks for something unrecorded. */
export function createFixtureFetch(): { fetch: FetchLike; served: RecordedCall[] } {
  const served: RecordedCall[] = [];
  const fetch: FetchLike = async (input, init) => {
    const request = parseRequest(input, init);
    const text = fixtureText(fixtureFor(request));
    served.push({ ...request, payload: JSON.parse(text) });
    return jsonResponse(text);
  };
  return { fetch, served };
}

export interface DeferredCall extends ParsedRequest {
  respond(): void;
}

/** Like createFixtureFetch, but responses wait until the test releases them —
 * used to force out-of-order delivery. */
export function createDeferredFetch(): {
  fetch: FetchLike;
  queue: DeferredCall[];
  served: RecordedCall[];
} {
  const queue: DeferredCall[] = [];
  const served: RecordedCall[] = [];
  const fetch: FetchLike = (input, init) =>
    new Promise<Response>((resolve, reject) => {
      const request = parseRequest(input, init);
      queue.push({
        ...request,
        respond: () => {
          try {
            const text = fixtureText(fixtureFor(request));
            served.push({ ...request, payload: JSON.parse(text) });
            resolve(jsonResponse(text));
          } catch (error) {
            reject(error);
          }
        },
      });
    });
  return { fetch, queue, served };
}

/** Route map double for lifecycle-logic unit tests; values may be functions of
 * the parsed request body. */
export type StubRoutes = Record<string, unknown | ((body: Record<string, unknown> | undefined) => unknown)>;

export function createStubFetch(routes: StubRoutes): { fetch: FetchLike; served: RecordedCall[] } {
  const served: RecordedCall[] = [];
  const fetch: FetchLike = async (input, init) => {
    const request = parseRequest(input, init);
    const key = `${request.method} ${request.path}`;
    if (!(key in routes)) {
      throw new Error(`no stub route for ${key}`);
    }
    const value = routes[key];
    const payload = typeof value === "function" ? (value as (b: unknown) => unknown)(request.body) : value;
    served.push({ ...request, payload });
    return jsonResponse(JSON.stringify(payload));
  };
  return { fetch, served };
}

export function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export async function waitFor(predicate: () => boolean, timeoutMs = 2000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!predicate()) {
    if (Date.now() > deadline) {
      throw new Error("condition not met in time");
    }
    await sleep(5);
  }
}

export function text(selector: string): string {
  const node = document.querySelector(selector);
  if (!node) {
    throw new Error(`no element matches ${selector}`);
  }
  return node.textContent ?? "";
}
