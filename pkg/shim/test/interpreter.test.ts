import { describe, expect, it } from "vitest";

import { Session } from "../src/interpreter";

describe("session execute semantics", () => {
  it("creates and reads against the persistent namespace", () => {
    const s = new Session();
    const first = s.execute("x = 1");
    expect(first.status).toBe("ok");
    expect(first.creates).toEqual(["x"]);
    expect(first.reads).toEqual([]);
    const second = s.execute("y = x * 2");
    expect(second.reads).toEqual(["x"]);
    expect(second.writes).toEqual(["y"]);
    expect(second.manifest.map((e) => e.name)).toEqual(["x", "y"]);
  });

  it("reports dropna-style self-updates as read plus write", () => {
    const s = new Session();
    s.execute("df = [{v: 1}, {v: null}, {v: 2}]");
    const outcome = s.execute("df = df.filter(function (r) { return r.v !== null })");
    expect(outcome.reads).toEqual(["df"]);
    expect(outcome.writes).toEqual(["df"]);
  });

  it("idempotent reruns write nothing (digest diff)", () => {
    const s = new Session();
    s.execute("x = 41");
    const rerun = s.execute("x = 41");
    expect(rerun.writes).toEqual([]);
    expect(rerun.reads).toEqual([]);
  });

  it("keeps effects before a thrown statement", () => {
    const s = new Session();
    const outcome = s.execute("a = 1; null.boom; b = 2");
    expect(outcome.status).toBe("error");
    expect(outcome.error_name).toBe("TypeError");
    expect(outcome.manifest.map((e) => e.name)).toEqual(["a"]);
  });

  it("names the missing variable in reference errors", () => {
    const s = new Session();
    const outcome = s.execute("q = missing_name + 1");
    expect(outcome.status).toBe("error");
    expect(outcome.error_message).toContain("missing_name");
  });

  it("captures and truncates console output", () => {
    const s = new Session();
    const outcome = s.execute("console.log('hello', {n: 1}); console.error('warn!')");
    expect(outcome.stdout).toBe('hello {"n":1}\n');
    expect(outcome.stderr).toBe("warn!\n");
    const big = s.execute("for (var i = 0; i < 9000; i++) console.log('x'.repeat(16))");
    expect(big.stdout.length).toBeLessThan(66 * 1024);
    expect(big.stdout).toContain("truncated");
  });

  it("hides underscore names and required modules from manifests", () => {
    const s = new Session();
    const outcome = s.execute("_scratch = 1; fs = require('fs'); real = 2");
    expect(outcome.manifest.map((e) => e.name)).toEqual(["real"]);
    expect(s.visibleNames()).toEqual(["real"]);
  });

  it("snapshot -> mutate -> restore is a fixed point", () => {
    const s = new Session();
    s.execute("k1 = 7; k2 = [1, 2]");
    const snap = s.snapshot();
    s.execute("k1 = 999; extra = 1");
    s.restore(snap as never);
    expect(s.visibleNames()).toEqual(["k1", "k2"]);
    const again = s.snapshot();
    expect(again.map((e) => e.value_digest)).toEqual(snap.map((e) => e.value_digest));
  });

  it("refuses to restore non-restorable entries by name", () => {
    const s = new Session();
    s.execute("f = function () {}");
    const snap = s.snapshot();
    expect(snap[0].restorable).toBe(false);
    expect(() => s.restore(snap as never)).toThrow(/f/);
  });

  it("let and const stay out of the namespace by design", () => {
    const s = new Session();
    s.execute("let hidden = 1; var shown = 2");
    expect(s.visibleNames()).toEqual(["shown"]);
  });

  it("reset clears everything", () => {
    const s = new Session();
    s.execute("x = 1; y = 2");
    s.reset();
    expect(s.visibleNames()).toEqual([]);
    const after = s.execute("z = typeof x");
    expect(after.manifest.find((e) => e.name === "z")).toBeTruthy();
  });
});
