/**
 * Audio file loading for the reference client.
 *
 * The protocol carries mono 16 kHz 16-bit PCM only, so anything else is
 * rejected up front rather than resampled. A ".wav" file is parsed as
 * RIFF/WAVE; any other extension is treated as headerless PCM16LE.
 */

import * as fs from "node:fs";

import { SAMPLE_RATE } from "./frames";

export function readAudio(path: string): Int16Array {
    return path.toLowerCase().endsWith(".wav") ? readWav(path) : readRawPcm(path);
}

export function readRawPcm(path: string): Int16Array {
    const data = fs.readFileSync(path);
    if (data.length % 2 !== 0) {
        throw new Error(`${path}: raw PCM16 file has an odd number of bytes`);
    }
    return toSamples(data);
}

export function readWav(path: string): Int16Array {
    const data = fs.readFileSync(path);
    if (data.length < 12 || data.toString("ascii", 0, 4) !== "RIFF" || data.toString("ascii", 8, 12) !== "WAVE") {
        throw new Error(`${path}: not a RIFF/WAVE file`);
    }

    let fmt: { format: number; channels: number; rate: number; bits: number } | null = null;
    let pcm: Buffer | null = null;
    let pos = 12;
    while (pos + 8 <= data.length) {
        const id = data.toString("ascii", pos, pos + 4);
        const size = data.readUInt32LE(pos + 4);
        const body = data.subarray(pos + 8, pos + 8 + size);
        if (id === "fmt " && body.length >= 16) {
            fmt = {
                format: body.readUInt16LE(0),
                channels: body.readUInt16LE(2),
                rate: body.readUInt32LE(4),
                bits: body.readUInt16LE(14),
            };
        } else if (id === "data") {
            pcm = body;
        }
        pos += 8 + size + (size % 2); // chunks are word-aligned
    }

    if (fmt === null || pcm === null) {
        throw new Error(`${path}: missing fmt or data chunk`);
    }
    if (fmt.format !== 1) {
        throw new Error(`${path}: compressed WAV (format ${fmt.format}); only PCM is supported`);
    }
    if (fmt.channels !== 1) {
        throw new Error(`${path}: expected mono audio, got ${fmt.channels} channels`);
    }
    if (fmt.bits !== 16) {
        throw new Error(`${path}: expected 16-bit samples, got ${fmt.bits}`);
    }
    if (fmt.rate !== SAMPLE_RATE) {
        throw new Error(`${path}: expected ${SAMPLE_RATE} Hz, got ${fmt.rate}`);
    }
    if (pcm.length % 2 !== 0) {
        throw new Error(`${path}: data chunk has an odd number of bytes`);
    }
    return toSamples(pcm);
}

function toSamples(pcm: Buffer): Int16Array {
    const samples = new Int16Array(pcm.length / 2);
    for (let i = 0; i < samples.length; i++) {
        samples[i] = pcm.readInt16LE(i * 2);
    }
    return samples;
}
