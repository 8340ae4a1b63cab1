/**
 * Line transports for the newline-delimited JSON protocol: a spawned serve
 * subprocess on stdio, or a local TCP socket.
 */
import { ChildProcess, spawn } from "node:child_process";
import * as net from "node:net";

export interface LineTransport {
  send(line: string): void;
  onLine(cb: (line: string) => void): void;
  onError(cb: (err: Error) => void): void;
  close(): Promise<void>;
}

class LineBuffer {
  private buf = "";
  constructor(private readonly emit: (line: string) => void) {}

  push(chunk: string): void {
    this.buf += chunk;
    const lines = this.buf.split("\n");
    this.buf = lines.pop() ?? "";
    for (const line of lines) {
      if (line.trim()) this.emit(line);
    }
  }
}

export class StdioTransport implements LineTransport {
  private readonly proc: ChildProcess;
  private lineCb: (line: string) => void = () => {};
  private errCb: (err: Error) => void = () => {};
  private stderr = "";

  constructor(command: string, args: string[],
              opts: { cwd?: string; env?: NodeJS.ProcessEnv } = {}) {
    this.proc = spawn(command, args, {
      cwd: opts.cwd,
      env: opts.env ?? process.env,
      stdio: ["pipe", "pipe", "pipe"],
    });
    const buffer = new LineBuffer((line) => this.lineCb(line));
    this.proc.stdout!.setEncoding("utf-8");
    this.proc.stdout!.on("data", (chunk: string) => buffer.push(chunk));
    this.proc.stderr!.setEncoding("utf-8");
    this.proc.stderr!.on("data", (chunk: string) => {
      this.stderr += chunk;
    });
    this.proc.on("error", (err) => this.errCb(err));
    this.proc.on("exit", (code) => {
      if (code !== 0 && code !== null) {
        this.errCb(new Error(`serve exited with ${code}: ${this.stderr}`));
      }
    });
  }

  send(line: string): void {
    this.proc.stdin!.write(line + "\n");
  }

  onLine(cb: (line: string) => void): void {
    this.lineCb = cb;
  }

  onError(cb: (err: Error) => void): void {
    this.errCb = cb;
  }

  close(): Promise<void> {
    return new Promise((resolve) => {
      this.proc.once("exit", () => resolve());
      this.proc.stdin!.end();
      setTimeout(() => {
        if (this.proc.exitCode === null) this.proc.kill();
        resolve();
      }, 2000).unref();
    });
  }
}

export class TcpTransport implements LineTransport {
  private lineCb: (line: string) => void = () => {};
  private errCb: (err: Error) => void = () => {};

  private constructor(private readonly socket: net.Socket) {
    const buffer = new LineBuffer((line) => this.lineCb(line));
    socket.setEncoding("utf-8");
    socket.on("data", (chunk: string) => buffer.push(chunk));
    socket.on("error", (err) => this.errCb(err));
  }

  /** Connect to "host:port"; rejects if the engine is unreachable. */
  static connect(address: string): Promise<TcpTransport> {
    const i = address.lastIndexOf(":");
    const host = address.slice(0, i) || "127.0.0.1";
    const port = Number(address.slice(i + 1));
    return new Promise((resolve, reject) => {
      const socket = net.connect({ host, port }, () =>
        resolve(new TcpTransport(socket)));
      socket.once("error", reject);
    });
  }

  send(line: string): void {
    this.socket.write(line + "\n");
  }

  onLine(cb: (line: string) => void): void {
    this.lineCb = cb;
  }

  onError(cb: (err: Error) => void): void {
    this.errCb = cb;
  }

  close(): Promise<void> {
    return new Promise((resolve) => {
      this.socket.end(() => resolve());
    });
  }
}
