import * as fs from "node:fs";

export interface WavShape {
    rate?: number;
    channels?: number;
    bits?: number;
    format?: number;
}

/** Write a canonical 44-byte-header RIFF/WAVE file around raw sample bytes. */
export function writeWav(path: string, pcm: Buffer, shape: WavShape = {}): void {
    const { rate = 16000, channels = 1, bits = 16, format = 1 } = shape;
    const blockAlign = (channels * bits) / 8;
    const header = Buffer.alloc(44);
    header.write("RIFF", 0, "ascii");
    header.writeUInt32LE(36 + pcm.length, 4);
    header.write("WAVE", 8, "ascii");
    header.write("fmt ", 12, "ascii");
    header.writeUInt32LE(16, 16);
    header.writeUInt16LE(format, 20);
    header.writeUInt16LE(channels, 22);
    header.writeUInt32LE(rate, 24);
    header.writeUInt32LE(rate * blockAlign, 28);
    header.writeUInt16LE(blockAlign, 32);
    header.writeUInt16LE(bits, 34);
    header.write("data", 36, "ascii");
    header.writeUInt32LE(pcm.length, 40);
    fs.writeFileSync(path, Buffer.concat([header, pcm]));
}

export function pcmOf(samples: number[]): Buffer {
    const buf = Buffer.alloc(samples.length * 2);
    samples.forEach((value, i) => buf.writeInt16LE(value, i * 2));
    return buf;
}
