#!/usr/bin/env node
/**
 * Stream a prerecorded WAV at real time and print the server's updates.
 *
 *   refclient --server 127.0.0.1:8765 --wav clip.wav --chunk 1.0
 */

import { parseArgs } from "node:util";

import { stream } from "./client";

async function main(): Promise<number> {
    let args;
    try {
        args = parseArgs({
            options: {
                server: { type: "string" },
                wav: { type: "string" },
                chunk: { type: "string", default: "1.0" },
                name: { type: "string" },
                language: { type: "string" },
            },
        }).values;
    } catch (exc) {
        console.error(String(exc instanceof Error ? exc.message : exc));
        return 2;
    }
    if (!args.server || !args.wav) {
        console.error("usage: refclient --server host:port --wav file.wav [--chunk 1.0] [--name id] [--language hint]");
        return 2;
    }
    const chunk = Number(args.chunk);

    try {
        const summary = await stream(
            {
                server: args.server,
                audio: args.wav,
                chunkDurationS: chunk,
                clientName: args.name,
                languageHint: args.language,
            },
            (update) => console.log(`[${update.kind}] ${update.text}`),
        );
        console.log(`chunks sent:     ${summary.chunksSent}`);
        console.log(`hypotheses:      ${summary.hypotheses}`);
        console.log(`confirmations:   ${summary.confirmations}`);
        console.log(`pacing warnings: ${summary.pacingWarnings}`);
        console.log(`final: ${summary.finalText}`);
        return 0;
    } catch (exc) {
        console.error(String(exc instanceof Error ? exc.message : exc));
        return 1;
    }
}

main().then((code) => {
    process.exitCode = code;
});
