//! Reference external denoiser: answers every request with a zero noise estimate.

use std::io::{self, BufRead, Write};

use hazediff_core::sampler::{ExternalRequest, ExternalResponse};

fn main() -> io::Result<()> {
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: ExternalRequest = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let eps = vec![0.0; req.height * req.width * req.channels];
        serde_json::to_writer(&mut out, &ExternalResponse { eps })?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    Ok(())
}
