//! Mono 16 kHz WAV files. Reads 16-bit PCM or 32-bit float; always writes
//! 32-bit float.

use std::io::{Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let reader = WavReader::open(path)?;
    read_from(reader)
}

pub fn read_wav_from<R: Read>(reader: R) -> Result<Waveform> {
    read_from(WavReader::new(reader)?)
}

fn read_from<R: Read>(reader: WavReader<R>) -> Result<Waveform> {
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::InvalidInput(format!(
            "expected mono audio, got {} channels",
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate(spec.sample_rate));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<Result<Vec<_>, _>>()?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<Vec<_>, _>>()?,
        (format, bits) => {
            return Err(Error::InvalidInput(format!(
                "unsupported sample format {format:?} with {bits} bits"
            )))
        }
    };
    Waveform::new(samples)
}

fn float_spec() -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    }
}

pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let mut writer = WavWriter::create(path, float_spec())?;
    write_samples(&mut writer, wave)?;
    writer.finalize()?;
    Ok(())
}

pub fn write_wav_to<W: Write + Seek>(sink: W, wave: &Waveform) -> Result<()> {
    let mut writer = WavWriter::new(sink, float_spec())?;
    write_samples(&mut writer, wave)?;
    writer.finalize()?;
    Ok(())
}

fn write_samples<W: Write + Seek>(writer: &mut WavWriter<W>, wave: &Waveform) -> Result<()> {
    for &s in wave.samples() {
        writer.write_sample(s as f32)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use super::*;

    #[test]
    fn float_round_trip_is_exact_for_f32_values() {
        let wave = Waveform::new(vec![0.0, 0.25, -0.5, 1.0e-3_f32 as f64]).unwrap();
        let mut buf = Cursor::new(Vec::new());
        write_wav_to(&mut buf, &wave).unwrap();
        buf.set_position(0);
        assert_eq!(read_wav_from(buf).unwrap(), wave);
    }

    #[test]
    fn pcm16_is_scaled() {
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut buf = Cursor::new(Vec::new());
        {
            let mut w = WavWriter::new(&mut buf, spec).unwrap();
            for v in [0i16, 16384, -32768, 32767] {
                w.write_sample(v).unwrap();
            }
            w.finalize().unwrap();
        }
        buf.set_position(0);
        let wave = read_wav_from(buf).unwrap();
        assert_eq!(wave.samples(), &[0.0, 0.5, -1.0, 32767.0 / 32768.0]);
    }

    #[test]
    fn rejects_wrong_rate_and_stereo() {
        for (channels, rate) in [(1u16, 8_000u32), (2, 16_000)] {
            let spec = WavSpec {
                channels,
                sample_rate: rate,
                bits_per_sample: 32,
                sample_format: SampleFormat::Float,
            };
            let mut buf = Cursor::new(Vec::new());
            {
                let mut w = WavWriter::new(&mut buf, spec).unwrap();
                for _ in 0..channels {
                    w.write_sample(0.0f32).unwrap();
                }
                w.finalize().unwrap();
            }
            buf.set_position(0);
            assert!(read_wav_from(buf).is_err());
        }
    }
}
