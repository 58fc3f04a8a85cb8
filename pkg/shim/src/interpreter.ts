/**
 * Persistent JavaScript session: one vm context whose enumerable
 * properties are the user's variables.
 *
 * Injected facilities (console capture, require) are defined
 * non-enumerable, and any object obtained through require() is tagged so
 * it never shows up in a manifest even when bound to a user name. Cells
 * should bind results with bare assignment or `var`; `let`/`const` live
 * in the context's lexical scope and are therefore invisible to
 * snapshots by design.
 */

import * as vm from "node:vm";
import { analyzeCell } from "./analyze";
import { Serialized, deserializeValue, serializeValue } from "./serialize";

const OUTPUT_LIMIT = 64 * 1024;
const TRUNCATION_MARK = "\n... [output truncated at 64 KiB]";

export interface ManifestEntry {
  name: string;
  type_tag: string;
  byte_size: number;
  value_digest: string;
  restorable: boolean;
}

export interface ExecOutcome {
  status: "ok" | "error";
  stdout: string;
  stderr: string;
  error_name: string | null;
  error_message: string | null;
  duration_ms: number;
  reads: string[];
  writes: string[];
  creates: string[];
  deletes: string[];
  manifest: ManifestEntry[];
}

export interface SnapshotEntry extends ManifestEntry {
  bytes_b64: string | null;
  reason?: string;
}

function truncate(text: string): string {
  if (text.length <= OUTPUT_LIMIT) return text;
  return text.slice(0, OUTPUT_LIMIT) + TRUNCATION_MARK;
}

export class Session {
  private sandbox: Record<string, unknown> = {};
  private context: vm.Context;
  private moduleObjects = new WeakSet<object>();
  private stdoutBuf: string[] = [];
  private stderrBuf: string[] = [];

  constructor(private executeTimeoutMs = 120_000) {
    this.context = vm.createContext(this.sandbox);
    this.installFacilities();
  }

  private installFacilities(): void {
    const write = (buf: string[]) => (...args: unknown[]) => {
      buf.push(args.map((a) => (typeof a === "string" ? a : stringify(a))).join(" ") + "\n");
    };
    const stringify = (v: unknown): string => {
      try {
        return typeof v === "object" && v !== null ? JSON.stringify(v) : String(v);
      } catch {
        return String(v);
      }
    };
    const fakeConsole = {
      log: write(this.stdoutBuf),
      info: write(this.stdoutBuf),
      warn: write(this.stderrBuf),
      error: write(this.stderrBuf),
    };
    const tagModules = (mod: unknown): unknown => {
      if (typeof mod === "object" && mod !== null) this.moduleObjects.add(mod);
      if (typeof mod === "function") this.moduleObjects.add(mod);
      return mod;
    };
    // eslint-disable-next-line @typescript-eslint/no-var-requires
    const hostRequire = require;
    const shimRequire = (name: string) => tagModules(hostRequire(name));
    for (const [key, value] of Object.entries({ console: fakeConsole, require: shimRequire })) {
      Object.defineProperty(this.sandbox, key, {
        value,
        enumerable: false,
        writable: false,
        configurable: false,
      });
    }
  }

  visibleNames(): string[] {
    return Object.keys(this.sandbox)
      .filter((name) => !name.startsWith("_"))
      .filter((name) => {
        const value = this.sandbox[name];
        return !(
          ((typeof value === "object" && value !== null) || typeof value === "function") &&
          this.moduleObjects.has(value as object)
        );
      })
      .sort();
  }

  private serializedView(): Map<string, Serialized> {
    const view = new Map<string, Serialized>();
    for (const name of this.visibleNames()) {
      view.set(name, serializeValue(this.sandbox[name]));
    }
    return view;
  }

  manifest(): ManifestEntry[] {
    return [...this.serializedView()].map(([name, s]) => ({
      name,
      type_tag: s.typeTag,
      byte_size: s.byteSize,
      value_digest: s.valueDigest,
      restorable: s.restorable,
    }));
  }

  execute(source: string): ExecOutcome {
    const preView = this.serializedView();
    const preNames = new Set(preView.keys());
    this.stdoutBuf.length = 0;
    this.stderrBuf.length = 0;
    let errorName: string | null = null;
    let errorMessage: string | null = null;
    const started = process.hrtime.bigint();
    let analysis = { loads: new Set<string>(), stores: new Set<string>(), deletes: new Set<string>() };
    try {
      analysis = analyzeCell(source);
      const script = new vm.Script(source, { filename: "cell.js" });
      script.runInContext(this.context, { timeout: this.executeTimeoutMs });
    } catch (err) {
      const e = err as Error;
      errorName = e?.constructor?.name ?? "Error";
      errorMessage = e?.message ?? String(err);
    }
    const durationMs = Number((process.hrtime.bigint() - started) / 1_000_000n);

    const postView = this.serializedView();
    const creates = [...postView.keys()].filter((n) => !preNames.has(n));
    const deletes = [...preNames].filter((n) => !postView.has(n));
    const writes = [...postView.keys()].filter((n) => {
      const before = preView.get(n);
      return before === undefined || before.valueDigest !== postView.get(n)!.valueDigest;
    });
    const reads = [...analysis.loads].filter((n) => preNames.has(n));

    return {
      status: errorName === null ? "ok" : "error",
      stdout: truncate(this.stdoutBuf.join("")),
      stderr: truncate(this.stderrBuf.join("")),
      error_name: errorName,
      error_message: errorMessage,
      duration_ms: durationMs,
      reads: reads.sort(),
      writes: writes.sort(),
      creates: creates.sort(),
      deletes: deletes.sort(),
      manifest: this.manifest(),
    };
  }

  snapshot(): SnapshotEntry[] {
    return [...this.serializedView()].map(([name, s]) => ({
      name,
      type_tag: s.typeTag,
      byte_size: s.byteSize,
      value_digest: s.valueDigest,
      restorable: s.restorable,
      bytes_b64: s.bytes ? s.bytes.toString("base64") : null,
      ...(s.reason ? { reason: s.reason } : {}),
    }));
  }

  restore(entries: { name: string; restorable: boolean; bytes_b64: string | null }[]): void {
    const refused = entries.filter((e) => !e.restorable || e.bytes_b64 === null);
    if (refused.length > 0) {
      throw new Error(
        `cannot restore non-restorable variables: ${refused.map((e) => e.name).join(", ")}`,
      );
    }
    this.clearUserNames();
    for (const entry of entries) {
      this.sandbox[entry.name] = deserializeValue(Buffer.from(entry.bytes_b64!, "base64"));
    }
  }

  reset(): void {
    this.clearUserNames();
  }

  private clearUserNames(): void {
    for (const name of Object.keys(this.sandbox)) {
      delete this.sandbox[name];
    }
  }
}
