/**
 * Wire framing for transcription sessions.
 *
 * Every frame is a 1-byte type tag, a 4-byte big-endian payload length,
 * then the payload. JSON payloads use a canonical encoding (sorted keys,
 * compact separators, UTF-8, integral numbers without a trailing ".0")
 * so that any conforming client, in any language, produces byte-identical
 * frames. The frozen vectors under ../../tests/golden pin that encoding.
 */

export const FRAME_HELLO = 0x01;
export const FRAME_AUDIO = 0x02;
export const FRAME_UPDATE = 0x03;
export const FRAME_ERROR = 0x04;
export const FRAME_CLOSE = 0x05;

const KNOWN_TAGS = new Set([FRAME_HELLO, FRAME_AUDIO, FRAME_UPDATE, FRAME_ERROR, FRAME_CLOSE]);

export const MAX_PAYLOAD = 16 * 1024 * 1024; // 16 MiB
export const SAMPLE_RATE = 16000;
export const MAX_CHUNK_SECONDS = 1.0;
export const TIME_EPS = 1e-6;

const HEADER_SIZE = 5; // u8 tag + u32 BE payload length
const SEQ_SIZE = 4; // u32 BE chunk sequence number

export class ProtocolError extends Error {
    readonly code: string;

    constructor(code: string, message: string) {
        super(`${code}: ${message}`);
        this.name = "ProtocolError";
        this.code = code;
    }
}

// ---------------------------------------------------------------------------
// frame codec
// ---------------------------------------------------------------------------

export interface Frame {
    tag: number;
    payload: Buffer;
}

export function encodeFrame(tag: number, payload: Buffer = Buffer.alloc(0)): Buffer {
    if (!KNOWN_TAGS.has(tag)) {
        throw new ProtocolError("bad-tag", `unknown frame tag 0x${tag.toString(16).padStart(2, "0")}`);
    }
    if (payload.length > MAX_PAYLOAD) {
        throw new ProtocolError("frame-too-large", `payload of ${payload.length} bytes`);
    }
    const header = Buffer.alloc(HEADER_SIZE);
    header.writeUInt8(tag, 0);
    header.writeUInt32BE(payload.length, 1);
    return Buffer.concat([header, payload]);
}

/**
 * Incremental frame parser. Feed it raw socket data in any fragmentation;
 * it returns every frame completed so far, in order.
 */
export class FrameReader {
    private buf: Buffer = Buffer.alloc(0);

    feed(chunk: Buffer): Frame[] {
        this.buf = this.buf.length === 0 ? chunk : Buffer.concat([this.buf, chunk]);
        const frames: Frame[] = [];
        for (;;) {
            if (this.buf.length < HEADER_SIZE) {
                break;
            }
            const tag = this.buf.readUInt8(0);
            const length = this.buf.readUInt32BE(1);
            if (!KNOWN_TAGS.has(tag)) {
                throw new ProtocolError("bad-tag", `unknown frame tag 0x${tag.toString(16).padStart(2, "0")}`);
            }
            if (length > MAX_PAYLOAD) {
                throw new ProtocolError("frame-too-large", `declared ${length} bytes`);
            }
            if (this.buf.length < HEADER_SIZE + length) {
                break;
            }
            frames.push({ tag, payload: this.buf.subarray(HEADER_SIZE, HEADER_SIZE + length) });
            this.buf = this.buf.subarray(HEADER_SIZE + length);
        }
        return frames;
    }

    /** Bytes buffered but not yet forming a complete frame. */
    get pendingBytes(): number {
        return this.buf.length;
    }
}

// ---------------------------------------------------------------------------
// canonical JSON
// ---------------------------------------------------------------------------

function sortedCopy(value: unknown): unknown {
    if (typeof value === "number") {
        if (!Number.isFinite(value)) {
            throw new Error("non-finite number on the wire");
        }
        // JSON.stringify already prints integral doubles without ".0" and
        // non-integral ones in shortest round-trip form, which matches the
        // server's encoder for the protocol's value range (timestamps and
        // durations; magnitudes between 1e-4 and 1e15).
        return value;
    }
    if (Array.isArray(value)) {
        return value.map(sortedCopy);
    }
    if (value !== null && typeof value === "object") {
        const out: Record<string, unknown> = {};
        for (const key of Object.keys(value as Record<string, unknown>).sort()) {
            out[key] = sortedCopy((value as Record<string, unknown>)[key]);
        }
        return out;
    }
    return value;
}

/** Deterministic JSON bytes: sorted keys, no spaces, UTF-8, 1.0 -> 1. */
export function canonicalJson(value: unknown): Buffer {
    return Buffer.from(JSON.stringify(sortedCopy(value)), "utf-8");
}

function parseJson(payload: Buffer): Record<string, unknown> {
    let obj: unknown;
    try {
        obj = JSON.parse(payload.toString("utf-8"));
    } catch (exc) {
        throw new ProtocolError("bad-json", String(exc));
    }
    if (obj === null || typeof obj !== "object" || Array.isArray(obj)) {
        throw new ProtocolError("bad-json", "expected a JSON object");
    }
    return obj as Record<string, unknown>;
}

// ---------------------------------------------------------------------------
// payload schemas
// ---------------------------------------------------------------------------

export interface WordSpan {
    start: number;
    end: number;
    text: string;
}

export interface TranscriptUpdate {
    kind: "hypothesis" | "confirmed";
    language: string;
    words: WordSpan[];
    text: string;
}

export function joinWords(words: WordSpan[]): string {
    return words.map((w) => w.text).join(" ");
}

function validateWordOrder(words: WordSpan[]): void {
    for (const w of words) {
        if (typeof w.start !== "number" || typeof w.end !== "number" || !Number.isFinite(w.start) || !Number.isFinite(w.end)) {
            throw new ProtocolError("bad-update", "word timestamps must be finite numbers");
        }
        if (w.end < w.start - TIME_EPS) {
            throw new ProtocolError("bad-update", `word ${JSON.stringify(w.text)} ends before it starts`);
        }
    }
    for (let i = 1; i < words.length; i++) {
        if (words[i].start < words[i - 1].start - TIME_EPS) {
            throw new ProtocolError("bad-update", "words out of order");
        }
        if (words[i].start < words[i - 1].end - TIME_EPS) {
            throw new ProtocolError("bad-update", "words overlap");
        }
    }
}

export function encodeUpdate(update: Omit<TranscriptUpdate, "text">): Buffer {
    return canonicalJson({
        kind: update.kind,
        language: update.language,
        text: joinWords(update.words),
        words: update.words.map((w) => ({ start: w.start, end: w.end, text: w.text })),
    });
}

export function parseUpdate(payload: Buffer): TranscriptUpdate {
    const obj = parseJson(payload);
    const kind = obj.kind;
    if (kind !== "hypothesis" && kind !== "confirmed") {
        throw new ProtocolError("bad-update", `bad update kind ${JSON.stringify(kind)}`);
    }
    if (typeof obj.language !== "string") {
        throw new ProtocolError("bad-update", "language must be a string");
    }
    if (!Array.isArray(obj.words)) {
        throw new ProtocolError("bad-update", "words must be an array");
    }
    const words: WordSpan[] = obj.words.map((w: unknown) => {
        const rec = w as Record<string, unknown>;
        if (rec === null || typeof rec !== "object" || typeof rec.text !== "string") {
            throw new ProtocolError("bad-update", "malformed word entry");
        }
        return { start: Number(rec.start), end: Number(rec.end), text: rec.text };
    });
    validateWordOrder(words);
    const text = joinWords(words);
    if (obj.text !== text) {
        throw new ProtocolError("bad-update", "text does not match joined words");
    }
    return { kind, language: obj.language, words, text };
}

export function encodeHello(clientName: string, chunkDurationS: number, languageHint?: string): Buffer {
    const obj: Record<string, unknown> = {
        client_name: clientName,
        chunk_duration_s: chunkDurationS,
    };
    if (languageHint !== undefined) {
        obj.language_hint = languageHint;
    }
    return canonicalJson(obj);
}

export function encodeHelloReply(clientId: string): Buffer {
    return canonicalJson({ client_id: clientId });
}

export function parseHelloReply(payload: Buffer): string {
    const obj = parseJson(payload);
    const clientId = obj.client_id;
    if (typeof clientId !== "string" || clientId.length === 0) {
        throw new ProtocolError("bad-hello", "client_id must be a non-empty string");
    }
    return clientId;
}

export function encodeAudio(seq: number, pcm: Buffer): Buffer {
    const head = Buffer.alloc(SEQ_SIZE);
    head.writeUInt32BE(seq, 0);
    return Buffer.concat([head, pcm]);
}

export function parseAudio(payload: Buffer): { seq: number; pcm: Buffer } {
    if (payload.length < SEQ_SIZE) {
        throw new ProtocolError("bad-audio", "audio payload shorter than its seq header");
    }
    return { seq: payload.readUInt32BE(0), pcm: payload.subarray(SEQ_SIZE) };
}

export function encodeError(code: string, message: string): Buffer {
    return canonicalJson({ code, message });
}

export function parseError(payload: Buffer): { code: string; message: string } {
    const obj = parseJson(payload);
    return {
        code: typeof obj.code === "string" ? obj.code : "unknown",
        message: typeof obj.message === "string" ? obj.message : "",
    };
}

/** Little-endian 16-bit PCM bytes for a block of samples. */
export function encodePcm16le(samples: Int16Array): Buffer {
    const buf = Buffer.alloc(samples.length * 2);
    for (let i = 0; i < samples.length; i++) {
        buf.writeInt16LE(samples[i], i * 2);
    }
    return buf;
}
