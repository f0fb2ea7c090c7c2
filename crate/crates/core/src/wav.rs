//! 16-bit PCM mono WAV files with the canonical 44-byte header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::signal::Waveform;

/// `round(x * 32767)`, saturated to the i16 range.
pub fn quantize(x: f64) -> i16 {
    (x * 32767.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

fn spec(sample_rate: u32) -> WavSpec {
    WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int }
}

pub fn write_wav_to<W: Write + Seek>(wav: &Waveform, out: W) -> Result<()> {
    let mut writer = WavWriter::new(out, spec(wav.sample_rate()))?;
    {
        let mut w16 = writer.get_i16_writer(wav.len() as u32);
        for &s in wav.samples() {
            w16.write_sample(quantize(s));
        }
        w16.flush()?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn write_wav(wav: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    write_wav_to(wav, BufWriter::new(File::create(path)?))
}

/// Reads a mono WAV. 16-bit PCM is the interchange format; other integer
/// depths and 32-bit float are accepted and scaled to [-1, 1].
pub fn read_wav_from<R: Read>(input: R) -> Result<Waveform> {
    let mut reader = hound::WavReader::new(input)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!("expected mono audio, found {} channels", spec.channels)));
    }
    let samples: Vec<f64> = match spec.sample_format {
        SampleFormat::Int if spec.bits_per_sample == 16 => {
            reader.samples::<i16>().map(|s| s.map(|v| v as f64 / 32767.0)).collect::<std::result::Result<_, _>>()?
        }
        SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader.samples::<i32>().map(|s| s.map(|v| v as f64 / scale)).collect::<std::result::Result<_, _>>()?
        }
        SampleFormat::Float => {
            reader.samples::<f32>().map(|s| s.map(|v| v as f64)).collect::<std::result::Result<_, _>>()?
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    read_wav_from(BufReader::new(File::open(path)?))
}
