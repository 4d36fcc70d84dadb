/** Static file host plus API proxy for the annotation frontend.

Serves index.html and the compiled dist/ bundle, and forwards /images,
/annotations and /export to the annotation service (ANNOT_API, default
http://127.0.0.1:8000), so the browser talks to one origin and needs no
CORS setup.
*/

import { readFile } from "node:fs/promises";
import http from "node:http";
import { dirname, join, resolve } from "node:path";
import { fileURLToPath, pathToFileURL } from "node:url";

const API_PREFIXES = ["/images", "/annotations", "/export"];

const MIME: Record<string, string> = {
  ".html": "text/html; charset=utf-8",
  ".js": "text/javascript; charset=utf-8",
  ".css": "text/css; charset=utf-8",
  ".map": "application/json",
  ".png": "image/png",
};

export interface DevServerOptions {
  root?: string;
  apiBase?: string;
}

function isApiPath(path: string): boolean {
  return API_PREFIXES.some(
    (prefix) => path === prefix || path.startsWith(prefix + "/") || path.startsWith(prefix + "?"),
  );
}

async function readBody(req: http.IncomingMessage): Promise<Buffer> {
  const chunks: Buffer[] = [];
  for await (const chunk of req) chunks.push(chunk as Buffer);
  return Buffer.concat(chunks);
}

export function createDevServer(options: DevServerOptions = {}): http.Server {
  const root = resolve(options.root ?? join(dirname(fileURLToPath(import.meta.url)), ".."));
  const apiBase = (options.apiBase ?? process.env.ANNOT_API ?? "http://127.0.0.1:8000").replace(
    /\/$/,
    "",
  );

  return http.createServer((req, res) => {
    void (async () => {
      const url = req.url ?? "/";
      const path = url.split("?")[0];
      if (isApiPath(path)) {
        await proxy(req, res, apiBase + url);
        return;
      }
      const name = path === "/" ? "/index.html" : path;
      const file = resolve(join(root, "." + name));
      const ext = name.slice(name.lastIndexOf("."));
      if (!file.startsWith(root) || !(ext in MIME)) {
        res.writeHead(404, { "content-type": "text/plain" }).end("not found");
        return;
      }
      try {
        const body = await readFile(file);
        res.writeHead(200, { "content-type": MIME[ext] }).end(body);
      } catch {
        res.writeHead(404, { "content-type": "text/plain" }).end("not found");
      }
    })().catch((err) => {
      res.writeHead(502, { "content-type": "text/plain" }).end(String(err));
    });
  });
}

async function proxy(
  req: http.IncomingMessage,
  res: http.ServerResponse,
  target: string,
): Promise<void> {
  const init: RequestInit = { method: req.method };
  if (req.method === "POST") {
    init.body = new Uint8Array(await readBody(req));
    init.headers = { "content-type": req.headers["content-type"] ?? "application/json" };
  }
  const upstream = await fetch(target, init);
  const body = Buffer.from(await upstream.arrayBuffer());
  res.writeHead(upstream.status, {
    "content-type": upstream.headers.get("content-type") ?? "application/octet-stream",
  });
  res.end(body);
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === pathToFileURL(resolve(process.argv[1])).href;

if (invokedDirectly) {
  const port = Number(process.env.UI_PORT ?? 8080);
  const server = createDevServer();
  server.listen(port, "127.0.0.1", () => {
    console.log(`annot-ui at http://127.0.0.1:${port}/`);
  });
}
