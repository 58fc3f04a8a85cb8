/**
 * Wire-protocol server: one JSON object per line on stdin/stdout.
 *
 * Request:  {"id": n, "op": ..., "payload": {...}}
 * Response: {"id": n, "status": "ok"|"error", "payload": {...}}
 *
 * Cell failures are "ok" responses whose outcome has status=error; an
 * "error" response means the request itself could not be served. Launch
 * with `--protocol <n>` to control the advertised protocol version.
 */

import * as readline from "node:readline";
import { Session } from "./interpreter";

const PROTOCOL_VERSION = 1;

interface Request {
  id: number | null;
  op: string;
  payload?: Record<string, unknown>;
}

function main(): void {
  const args = process.argv.slice(2);
  let advertised = PROTOCOL_VERSION;
  const flagIndex = args.indexOf("--protocol");
  if (flagIndex >= 0 && args[flagIndex + 1] !== undefined) {
    advertised = Number(args[flagIndex + 1]);
  }

  const session = new Session();
  const rl = readline.createInterface({ input: process.stdin, terminal: false });

  const respond = (id: number | null, status: "ok" | "error", payload: unknown): void => {
    process.stdout.write(JSON.stringify({ id, status, payload }) + "\n");
  };

  rl.on("line", (line: string) => {
    if (!line.trim()) return;
    let request: Request;
    try {
      request = JSON.parse(line);
    } catch {
      respond(null, "error", { error: "ProtocolError", message: "unparseable request" });
      return;
    }
    const payload = request.payload ?? {};
    try {
      switch (request.op) {
        case "hello":
          respond(request.id, "ok", {
            protocol: advertised,
            dialect: "javascript",
            backend: "branchbench-jsshim",
          });
          break;
        case "execute":
          respond(request.id, "ok", session.execute(String(payload.source ?? "")));
          break;
        case "snapshot":
          respond(request.id, "ok", { entries: session.snapshot() });
          break;
        case "restore":
          session.restore((payload.entries ?? []) as never);
          respond(request.id, "ok", {});
          break;
        case "reset":
          session.reset();
          respond(request.id, "ok", {});
          break;
        case "list_vars":
          respond(request.id, "ok", { names: session.visibleNames() });
          break;
        case "shutdown":
          respond(request.id, "ok", {});
          process.exit(0);
          break;
        default:
          respond(request.id, "error", {
            error: "UnknownOp",
            message: `unknown op '${request.op}'`,
          });
      }
    } catch (err) {
      const e = err as Error;
      respond(request.id, "error", {
        error: e?.constructor?.name ?? "Error",
        message: e?.message ?? String(err),
      });
    }
  });
}

main();
