/**
 * Streaming client: pace a prerecorded file at real time against a
 * transcription server and collect its updates.
 *
 * One background reader (socket data events) and one paced writer (the
 * async chunk loop); update callbacks fire on the event loop in arrival
 * order. Chunk k is sent once its audio would exist in a live capture,
 * at t0 + (k+1) * chunk_duration.
 */

import * as net from "node:net";
import * as path from "node:path";

import {
    FRAME_AUDIO,
    FRAME_CLOSE,
    FRAME_ERROR,
    FRAME_HELLO,
    FRAME_UPDATE,
    Frame,
    FrameReader,
    MAX_CHUNK_SECONDS,
    ProtocolError,
    SAMPLE_RATE,
    TranscriptUpdate,
    WordSpan,
    encodeAudio,
    encodeFrame,
    encodeHello,
    encodePcm16le,
    joinWords,
    parseError,
    parseHelloReply,
    parseUpdate,
} from "./frames";
import { readAudio } from "./wav";

/** Tolerated scheduling slip, in chunks, before a pacing warning. */
export const PACING_GRACE_CHUNKS = 1.0;

const DRAIN_EXTRA_SECONDS = 90.0;

export interface ClientConfig {
    /** Server address as "host:port" (":port" defaults to 127.0.0.1). */
    server: string;
    /** Path to a mono 16 kHz 16-bit WAV, or raw PCM16LE for other extensions. */
    audio: string;
    /** Declared chunk duration in seconds, within (0, 1]. */
    chunkDurationS: number;
    /** Name sent in the handshake; defaults to the audio file's stem. */
    clientName?: string;
    languageHint?: string;
}

export interface StreamSummary {
    clientId: string;
    chunksSent: number;
    hypotheses: number;
    confirmations: number;
    pacingWarnings: number;
    /** All confirmed words joined in order; never retracted by the server. */
    finalText: string;
}

export type UpdateCallback = (update: TranscriptUpdate) => void;

export function parseServer(server: string): { host: string; port: number } {
    const cut = server.lastIndexOf(":");
    const host = cut > 0 ? server.slice(0, cut) : "127.0.0.1";
    const portText = server.slice(cut + 1);
    const port = Number(portText);
    if (!Number.isInteger(port) || port < 1 || port > 65535) {
        throw new Error(`bad server address ${JSON.stringify(server)}: port must be 1-65535`);
    }
    return { host, port };
}

interface Deferred<T> {
    promise: Promise<T>;
    resolve: (value: T) => void;
    reject: (err: Error) => void;
}

function deferred<T>(): Deferred<T> {
    let resolve!: (value: T) => void;
    let reject!: (err: Error) => void;
    const promise = new Promise<T>((res, rej) => {
        resolve = res;
        reject = rej;
    });
    // A rejection may arrive while no await is attached (e.g. during the
    // paced writer loop); pre-attach a handler so it is never "unhandled".
    promise.catch(() => undefined);
    return { promise, resolve, reject };
}

function sleep(ms: number): Promise<void> {
    return new Promise((res) => setTimeout(res, ms));
}

function connect(host: string, port: number): Promise<net.Socket> {
    return new Promise((resolve, reject) => {
        const sock = net.connect({ host, port });
        const onError = (err: Error) => {
            reject(new Error(`cannot reach server at ${host}:${port}: ${err.message}`));
        };
        sock.once("error", onError);
        sock.once("connect", () => {
            sock.removeListener("error", onError);
            sock.setNoDelay(true);
            resolve(sock);
        });
    });
}

/**
 * Stream the configured file and resolve with the session summary once
 * the server has drained and replied Close. Rejects on connection
 * failures, protocol Error frames, and malformed server frames.
 */
export async function stream(config: ClientConfig, onUpdate?: UpdateCallback): Promise<StreamSummary> {
    if (!(config.chunkDurationS > 0) || config.chunkDurationS > MAX_CHUNK_SECONDS) {
        throw new Error(`chunk duration ${config.chunkDurationS} outside (0, ${MAX_CHUNK_SECONDS}]`);
    }
    const samples = readAudio(config.audio);
    const clientName = config.clientName ?? path.basename(config.audio, path.extname(config.audio));
    const { host, port } = parseServer(config.server);

    const summary: StreamSummary = {
        clientId: "",
        chunksSent: 0,
        hypotheses: 0,
        confirmations: 0,
        pacingWarnings: 0,
        finalText: "",
    };
    const confirmedWords: WordSpan[] = [];

    const socket = await connect(host, port);
    const reader = new FrameReader();
    const helloReply = deferred<string>();
    const drained = deferred<void>();
    let handshaken = false;
    let finished = false;
    let failure: Error | null = null;

    const fail = (err: Error) => {
        if (finished) {
            return;
        }
        finished = true;
        failure = err;
        helloReply.reject(err);
        drained.reject(err);
        socket.destroy();
    };

    const handleFrame = (frame: Frame) => {
        if (!handshaken) {
            if (frame.tag === FRAME_HELLO) {
                handshaken = true;
                helloReply.resolve(parseHelloReply(frame.payload));
            } else if (frame.tag === FRAME_ERROR) {
                const { code, message } = parseError(frame.payload);
                fail(new ProtocolError(code, message));
            } else {
                fail(new ProtocolError("bad-frame", `expected a hello reply, got tag 0x0${frame.tag.toString(16)}`));
            }
            return;
        }
        switch (frame.tag) {
            case FRAME_UPDATE: {
                const update = parseUpdate(frame.payload);
                if (update.kind === "confirmed") {
                    summary.confirmations++;
                    confirmedWords.push(...update.words);
                } else {
                    summary.hypotheses++;
                }
                if (onUpdate) {
                    onUpdate(update);
                }
                break;
            }
            case FRAME_ERROR: {
                const { code, message } = parseError(frame.payload);
                fail(new ProtocolError(code, message));
                break;
            }
            case FRAME_CLOSE:
                finished = true;
                drained.resolve();
                break;
            default:
                fail(new ProtocolError("bad-frame", `unexpected server frame tag 0x0${frame.tag.toString(16)}`));
        }
    };

    socket.on("data", (chunk: Buffer) => {
        try {
            for (const frame of reader.feed(chunk)) {
                handleFrame(frame);
            }
        } catch (exc) {
            fail(exc instanceof Error ? exc : new Error(String(exc)));
        }
    });
    socket.on("error", (err: Error) => fail(new Error(`connection lost: ${err.message}`)));
    socket.on("close", () => fail(new Error("server closed the connection before Close")));

    try {
        socket.write(encodeFrame(FRAME_HELLO, encodeHello(clientName, config.chunkDurationS, config.languageHint)));
        summary.clientId = await helloReply.promise;

        const chunkN = Math.round(config.chunkDurationS * SAMPLE_RATE);
        const nChunks = Math.max(1, Math.ceil(samples.length / chunkN));
        const t0 = Date.now() / 1000;
        for (let k = 0; k < nChunks; k++) {
            const target = t0 + (k + 1) * config.chunkDurationS;
            const now = Date.now() / 1000;
            if (now < target) {
                await sleep((target - now) * 1000);
            } else if (now - target > PACING_GRACE_CHUNKS * config.chunkDurationS) {
                summary.pacingWarnings++;
            }
            if (failure !== null) {
                throw failure;
            }
            let piece = samples.subarray(k * chunkN, (k + 1) * chunkN);
            if (piece.length < chunkN) {
                const padded = new Int16Array(chunkN);
                padded.set(piece);
                piece = padded;
            }
            socket.write(encodeFrame(FRAME_AUDIO, encodeAudio(k, encodePcm16le(piece))));
            summary.chunksSent++;
        }
        socket.write(encodeFrame(FRAME_CLOSE));

        const deadline = nChunks * config.chunkDurationS + DRAIN_EXTRA_SECONDS;
        let timer: NodeJS.Timeout | undefined;
        const timeout = new Promise<never>((_, rej) => {
            timer = setTimeout(() => rej(new Error("timed out waiting for the server to drain")), deadline * 1000);
        });
        try {
            await Promise.race([drained.promise, timeout]);
        } finally {
            clearTimeout(timer);
        }

        summary.finalText = joinWords(confirmedWords);
        return summary;
    } finally {
        finished = true; // silence late socket events on all exit paths
        socket.destroy();
    }
}
