/**
 * Canonical value serialization for the shim namespace.
 *
 * Restorable values are plain JSON data (null, finite numbers, booleans,
 * strings, arrays, plain objects); they serialize to canonical JSON with
 * recursively sorted object keys, so equal values always digest equally.
 * Anything else (functions, NaN, class instances, handles, ...) is
 * non-restorable: it stays in the manifest with a non-authoritative digest
 * over its type name and textual rendering, but carries no payload bytes.
 */

import { createHash } from "node:crypto";

export interface Serialized {
  restorable: boolean;
  bytes: Buffer | null;
  typeTag: string;
  byteSize: number;
  valueDigest: string;
  reason?: string;
}

function isPlainPrototype(proto: object | null): boolean {
  // Plain across realms: vm-context objects carry that context's own
  // Object.prototype, so identity against the host's cannot be used.
  return proto === null || Object.getPrototypeOf(proto) === null;
}

export function typeTagOf(value: unknown): string {
  if (value === null) return "null";
  if (Array.isArray(value)) return "array";
  const t = typeof value;
  if (t === "object") {
    if (isPlainPrototype(Object.getPrototypeOf(value))) return "object";
    return (value as object).constructor?.name ?? "object";
  }
  return t;
}

class NotPlain extends Error {
  constructor(public why: string) {
    super(why);
  }
}

function canonicalize(value: unknown): string {
  if (value === null) return "null";
  switch (typeof value) {
    case "boolean":
      return value ? "true" : "false";
    case "number":
      if (!Number.isFinite(value)) throw new NotPlain(`non-finite number ${value}`);
      return JSON.stringify(value);
    case "string":
      return JSON.stringify(value);
    case "undefined":
      throw new NotPlain("undefined is not serializable");
    case "function":
      throw new NotPlain("functions are not serializable");
    case "symbol":
      throw new NotPlain("symbols are not serializable");
    case "bigint":
      throw new NotPlain("bigints are not serializable");
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalize).join(",") + "]";
  }
  if (!isPlainPrototype(Object.getPrototypeOf(value))) {
    throw new NotPlain(`instances of ${typeTagOf(value)} are not serializable`);
  }
  const keys = Object.keys(value as object).sort();
  const parts = keys.map(
    (k) => JSON.stringify(k) + ":" + canonicalize((value as Record<string, unknown>)[k]),
  );
  return "{" + parts.join(",") + "}";
}

export function sha256Hex(data: Buffer | string): string {
  return createHash("sha256").update(data).digest("hex");
}

export function serializeValue(value: unknown): Serialized {
  const typeTag = typeTagOf(value);
  try {
    const bytes = Buffer.from(canonicalize(value), "utf-8");
    return {
      restorable: true,
      bytes,
      typeTag,
      byteSize: bytes.length,
      valueDigest: sha256Hex(bytes),
    };
  } catch (err) {
    if (!(err instanceof NotPlain)) throw err;
    // Non-authoritative digest: type name plus an identity-free rendering.
    let rendering: string;
    try {
      rendering = String(value).slice(0, 1024);
    } catch {
      rendering = "<unprintable>";
    }
    return {
      restorable: false,
      bytes: null,
      typeTag,
      byteSize: 0,
      valueDigest: sha256Hex(`unrestorable:${typeTag}:${rendering}`),
      reason: err.why,
    };
  }
}

export function deserializeValue(bytes: Buffer): unknown {
  return JSON.parse(bytes.toString("utf-8"));
}
