//! Objectives computed by a long-running external process.
//!
//! Protocol: one line per query holding the tuple as space-separated decimal
//! values; the process answers one line, `0` or `1`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::space::Value;

use super::BooleanFn;

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    line: String,
}

pub struct ExternalFn {
    command: Vec<String>,
    pipe: Mutex<Pipe>,
}

impl ExternalFn {
    pub fn spawn(command: &[String]) -> Result<Self> {
        let (program, args) =
            command.split_first().ok_or_else(|| Error::External("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::External(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ExternalFn { command: command.to_vec(), pipe: Mutex::new(Pipe { child, stdin, stdout, line: String::new() }) })
    }

    pub fn query(&self, x: &[Value]) -> Result<bool> {
        let mut pipe = self.pipe.lock().map_err(|_| Error::External("poisoned lock".into()))?;
        let Pipe { stdin, stdout, line, .. } = &mut *pipe;
        let mut out = String::with_capacity(x.len() * 4);
        for (j, v) in x.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            out.push_str(&v.to_string());
        }
        out.push('\n');
        stdin.write_all(out.as_bytes())?;
        stdin.flush()?;
        line.clear();
        if stdout.read_line(line)? == 0 {
            return Err(Error::External(format!("`{}` closed its output", self.command.join(" "))));
        }
        match line.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::External(format!("expected 0 or 1, got `{other}`"))),
        }
    }
}

impl BooleanFn for ExternalFn {
    fn eval(&self, x: &[Value]) -> bool {
        // A broken oracle cannot be recovered from mid-run.
        self.query(x).unwrap_or_else(|e| panic!("external objective failed: {e}"))
    }

    fn describe(&self) -> String {
        format!("external({})", self.command.join(" "))
    }
}

impl Drop for ExternalFn {
    fn drop(&mut self) {
        if let Ok(pipe) = self.pipe.get_mut() {
            let _ = pipe.child.kill();
            let _ = pipe.child.wait();
        }
    }
}
