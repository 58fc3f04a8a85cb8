import { afterEach, beforeEach, describe, expect, it } from "vitest";

import { ShimClient } from "./client";

describe("wire protocol", () => {
  let client: ShimClient;

  beforeEach(() => {
    client = new ShimClient();
  });

  afterEach(async () => {
    await client.close();
  });

  it("answers hello with protocol and dialect", async () => {
    const hello = await client.request("hello", { protocol: 1 });
    expect(hello.status).toBe("ok");
    expect(hello.payload).toMatchObject({ protocol: 1, dialect: "javascript" });
  });

  it("advertises the protocol version it was launched with", async () => {
    const other = new ShimClient("2");
    const hello = await other.request("hello", { protocol: 1 });
    expect(hello.payload.protocol).toBe(2);
    await other.close();
  });

  it("mirrors request ids and serves execute over the wire", async () => {
    const outcome = await client.execute("x = 1 + 2");
    expect(outcome.status).toBe("ok");
    expect(outcome.manifest).toEqual([
      {
        name: "x",
        type_tag: "number",
        byte_size: 1,
        value_digest: expect.stringMatching(/^[0-9a-f]{64}$/),
        restorable: true,
      },
    ]);
  });

  it("moves binary payloads as base64 and restores them", async () => {
    await client.execute("data = {text: 'héllo', nums: [1, 2.5]}");
    const snap = await client.request("snapshot");
    const entry = snap.payload.entries.find((e: any) => e.name === "data");
    expect(Buffer.from(entry.bytes_b64, "base64").toString("utf-8")).toBe(
      '{"nums":[1,2.5],"text":"héllo"}',
    );
    await client.execute("data = 0; other = 1");
    const restored = await client.request("restore", { entries: [entry] });
    expect(restored.status).toBe("ok");
    const vars = await client.request("list_vars");
    expect(vars.payload.names).toEqual(["data"]);
  });

  it("reports request-level failures as error responses", async () => {
    const bad = await client.request("no_such_op");
    expect(bad.status).toBe("error");
    const refused = await client.request("restore", {
      entries: [{ name: "f", restorable: false, bytes_b64: null }],
    });
    expect(refused.status).toBe("error");
    expect(refused.payload.message).toContain("f");
  });

  it("resets the namespace over the wire", async () => {
    await client.execute("x = 1");
    await client.request("reset");
    const vars = await client.request("list_vars");
    expect(vars.payload.names).toEqual([]);
  });
});
