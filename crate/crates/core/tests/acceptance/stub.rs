//! Minimal Gerrit lookalike over plain TCP, serving fixture records with the
//! `)]}'` guard line.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use multidimer_core::scm::FixtureRecord;
use multidimer_core::RefKind;
use serde_json::{json, Map, Value};

struct Index {
    change_ids: BTreeMap<String, (String, Vec<String>)>,
    shas: BTreeMap<String, (String, Vec<String>)>,
}

pub struct StubGerrit {
    pub addr: SocketAddr,
    pub requests: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl StubGerrit {
    pub fn serve(records: &[FixtureRecord]) -> StubGerrit {
        let mut index = Index {
            change_ids: BTreeMap::new(),
            shas: BTreeMap::new(),
        };
        for r in records {
            let entry = (r.repository.clone(), r.changed_files.clone());
            match r.reference.kind {
                RefKind::GerritChangeId => index
                    .change_ids
                    .insert(r.reference.value.to_lowercase(), entry),
                RefKind::GitSha => index.shas.insert(r.reference.value.to_lowercase(), entry),
            };
        }
        let index = Arc::new(index);
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
        let addr = listener.local_addr().unwrap();
        let stop = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(AtomicUsize::new(0));
        let (flag, count) = (stop.clone(), requests.clone());
        let thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let (index, count) = (index.clone(), count.clone());
                std::thread::spawn(move || {
                    count.fetch_add(1, Ordering::SeqCst);
                    let _ = handle(stream, &index);
                });
            }
        });
        StubGerrit {
            addr,
            requests,
            stop,
            thread: Some(thread),
        }
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for StubGerrit {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn change_json(repo: &str, files: &[String], revision: &str) -> Value {
    let mut file_map = Map::new();
    file_map.insert(
        "/COMMIT_MSG".into(),
        json!({"status": "A", "lines_inserted": 10}),
    );
    for f in files {
        file_map.insert(f.clone(), json!({"lines_inserted": 3, "lines_deleted": 1}));
    }
    json!({
        "project": repo,
        "branch": "master",
        "current_revision": revision,
        "revisions": { revision: { "_number": 1, "files": file_map } },
    })
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            if let Ok(b) = u8::from_str_radix(&s[i + 1..i + 3], 16) {
                out.push(b);
                i += 3;
                continue;
            }
        }
        out.push(bytes[i]);
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

fn respond(index: &Index, target: &str) -> (u16, String) {
    let (path, query) = target.split_once('?').unwrap_or((target, ""));
    let path = percent_decode(path);
    if path == "/changes/" {
        let q = query
            .split('&')
            .find_map(|kv| kv.strip_prefix("q="))
            .map(percent_decode)
            .unwrap_or_default();
        let Some(sha) = q.strip_prefix("commit:") else {
            return (400, "bad query".into());
        };
        let sha = sha.to_lowercase();
        let hits: Vec<Value> = index
            .shas
            .range(sha.clone()..)
            .take_while(|(k, _)| k.starts_with(&sha))
            .map(|(k, (repo, files))| change_json(repo, files, k))
            .collect();
        return (200, format!(")]}}'\n{}", Value::Array(hits)));
    }
    if let Some(id) = path.strip_prefix("/changes/") {
        return match index.change_ids.get(&id.to_lowercase()) {
            Some((repo, files)) => (
                200,
                format!(
                    ")]}}'\n{}",
                    change_json(repo, files, "0000000000000000000000000000000000000000")
                ),
            ),
            None => (404, "Not found".into()),
        };
    }
    (404, "Not found".into())
}

fn handle(stream: TcpStream, index: &Index) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
    }
    let target = request_line.split_whitespace().nth(1).unwrap_or("/");
    let (status, body) = respond(index, target);
    let reason = match status {
        200 => "OK",
        404 => "Not Found",
        _ => "Bad Request",
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json; charset=UTF-8\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    out.flush()
}
