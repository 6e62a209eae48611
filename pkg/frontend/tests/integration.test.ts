import { afterAll, beforeAll, describe, expect, it } from "vitest";
import * as fs from "node:fs";
import * as path from "node:path";

import { ApiClient } from "../src/api.js";
import { CardQueue } from "../src/queue.js";
import { LiveServer, readVoteLog, startServer } from "./live.js";

let live: LiveServer;

beforeAll(async () => {
  live = await startServer("solo");
});

afterAll(async () => {
  await live.stop();
});

describe("vote round-trip against a live service", () => {
  it("votes a 6-pair batch, undoes the last vote, and resolves matching labels", async () => {
    const api = new ApiClient(live.base);

    const meta = await api.meta();
    expect(meta.experts).toEqual(["solo"]);
    expect(meta.total_pairs).toBe(6);

    const queue = new CardQueue(api, "solo");
    await queue.refill();
    expect(queue.state).toBe("ready");
    expect(queue.current()?.total_in_batch).toBe(6);

    // Scripted choices for the six pairs in queue order, which for a fresh
    // single-expert log is the service's pair-id order.
    const choices: (0 | 1)[] = [1, 0, 1, 1, 0, 1];
    const votedPairs: { pair_id: string; query: string; candidate: string }[] = [];
    for (const label of choices) {
      const card = queue.current();
      expect(card).not.toBeNull();
      const batchTask = (await api.tasks("solo", 6)).find((t) => t.pair_id === card!.pair_id);
      expect(batchTask).toBeDefined();
      votedPairs.push({
        pair_id: card!.pair_id,
        query: batchTask!.query,
        candidate: batchTask!.candidate,
      });
      expect(await queue.vote(label)).toBe("acked");
    }
    expect(queue.state).toBe("done");

    // Undo the final vote and flip it; the service must treat the re-vote as
    // superseding, not as a second opinion.
    expect(queue.undo()).toBe("restored");
    expect(queue.state).toBe("ready");
    expect(queue.current()?.pair_id).toBe(votedPairs[5].pair_id);
    expect(await queue.vote(0)).toBe("acked");
    expect(queue.state).toBe("done");

    const progress = queue.progress;
    expect(progress?.total_pairs).toBe(6);
    expect(progress?.fully_reviewed).toBe(6);
    expect(progress?.positives_so_far).toBe(3);
    expect(progress?.per_expert_done).toEqual({ solo: 6 });

    const outPath = path.join(live.tmp, "labels.tsv");
    const resolved = await api.resolve(outPath);
    expect(resolved.rows).toBe(6);

    const wanted = new Map<string, number>();
    votedPairs.forEach((p, i) => {
      const label = i === 5 ? 0 : choices[i];
      wanted.set(`${p.query}\t${p.candidate}`, label);
    });
    const labelLines = fs
      .readFileSync(outPath, "utf-8")
      .trim()
      .split("\n")
      .map((line) => line.split("\t"));
    expect(labelLines).toHaveLength(6);
    for (const [q, c, label, numVotes] of labelLines) {
      expect(wanted.get(`${q}\t${c}`)).toBe(Number(label));
      expect(Number(numVotes)).toBe(1);
    }

    // Append-only log: seven entries, the last superseding the sixth.
    const logged = readVoteLog(live.votesPath);
    expect(logged).toHaveLength(7);
    const sixth = logged[5];
    const superseding = logged[6];
    expect(superseding.q).toBe(sixth.q);
    expect(superseding.c).toBe(sixth.c);
    expect(superseding.expert).toBe(sixth.expert);
    expect(sixth.label).toBe(1);
    expect(superseding.label).toBe(0);
    expect(superseding.q).toBe(votedPairs[5].query);
    expect(superseding.c).toBe(votedPairs[5].candidate);
  });

  it("serves pair images or a 404 the client can turn into a placeholder", async () => {
    const res = await fetch(`${live.base}/img/q0`);
    expect(res.status).toBe(404);
  });
});
