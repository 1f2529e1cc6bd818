//! Binary volume, histogram and surface files: text headers, little-endian
//! payloads.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::grid::{AlbedoVolume, Vec3, VoxelGrid};
use crate::signal::{MeasurementGeometry, MeasurementPair, PhotonHistogram, SPEED_OF_LIGHT};
use crate::surface::{SurfaceG, SurfacePixel};

pub const VOLUME_MAGIC: &str = "NLOSVOL1";
pub const HISTOGRAM_MAGIC: &str = "NLOSHIST1";
pub const SURFACE_MAGIC: &str = "NLOSSURF1";

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

/// Line-oriented reader over a byte buffer that knows its offset.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    /// Next `\n`-terminated line and its starting offset.
    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| format_err(self.bytes.len(), "unexpected end of header"))?;
        let text = std::str::from_utf8(&rest[..end])
            .map_err(|e| format_err(start + e.valid_up_to(), "header is not UTF-8"))?;
        self.pos = start + end + 1;
        Ok((start, text))
    }

    /// Whitespace-separated fields of the next line, each with its offset.
    fn fields(&mut self, expected: usize, what: &str) -> Result<Vec<(usize, &'a str)>> {
        let (start, text) = self.line()?;
        let mut out = Vec::new();
        let mut idx = 0;
        for tok in text.split(' ') {
            if !tok.is_empty() {
                out.push((start + idx, tok));
            }
            idx += tok.len() + 1;
        }
        if out.len() != expected {
            return Err(format_err(
                start,
                format!("{what}: expected {expected} fields, found {}", out.len()),
            ));
        }
        Ok(out)
    }

    fn magic(&mut self, magic: &str) -> Result<()> {
        let (start, text) = self.line()?;
        if text != magic {
            return Err(format_err(start, format!("expected magic {magic}, found {text:?}")));
        }
        Ok(())
    }

    fn payload(&self, len: usize) -> Result<&'a [u8]> {
        let avail = self.bytes.len() - self.pos;
        if avail < len {
            return Err(format_err(
                self.bytes.len(),
                format!("payload truncated: expected {len} bytes, found {avail}"),
            ));
        }
        if avail > len {
            return Err(format_err(
                self.pos + len,
                format!("{} trailing bytes after payload", avail - len),
            ));
        }
        Ok(&self.bytes[self.pos..])
    }
}

fn parse<T: std::str::FromStr>(field: (usize, &str), what: &str) -> Result<T> {
    field
        .1
        .parse()
        .map_err(|_| format_err(field.0, format!("cannot parse {what} from {:?}", field.1)))
}

fn parse_vec3(fields: &[(usize, &str)], what: &str) -> Result<Vec3> {
    Ok([
        parse(fields[0], what)?,
        parse(fields[1], what)?,
        parse(fields[2], what)?,
    ])
}

fn keyword(field: (usize, &str), expected: &str) -> Result<()> {
    if field.1 == expected {
        Ok(())
    } else {
        Err(format_err(field.0, format!("expected {expected:?}, found {:?}", field.1)))
    }
}

fn vec3(v: &Vec3) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

pub fn write_volume(v: &AlbedoVolume) -> Vec<u8> {
    let g = &v.grid;
    let header = format!(
        "{VOLUME_MAGIC}\n{} {} {}\nvoxel_size {}\norigin {}\n",
        g.dims[0],
        g.dims[1],
        g.dims[2],
        vec3(&g.voxel_size),
        vec3(&g.origin)
    );
    let mut out = header.into_bytes();
    for x in v.values.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn read_volume(bytes: &[u8]) -> Result<AlbedoVolume> {
    let mut c = Cursor::new(bytes);
    c.magic(VOLUME_MAGIC)?;
    let dims_f = c.fields(3, "dims")?;
    let dims: [usize; 3] = [
        parse(dims_f[0], "I")?,
        parse(dims_f[1], "J")?,
        parse(dims_f[2], "K")?,
    ];
    let vs = c.fields(4, "voxel_size line")?;
    keyword(vs[0], "voxel_size")?;
    let voxel_size = parse_vec3(&vs[1..], "voxel size")?;
    let or = c.fields(4, "origin line")?;
    keyword(or[0], "origin")?;
    let origin = parse_vec3(&or[1..], "origin")?;
    let grid = VoxelGrid::new(dims, origin, voxel_size)?;
    let n = grid.num_voxels();
    let payload = c.payload(8 * n)?;
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    Ok(AlbedoVolume {
        values: Array3::from_shape_vec((dims[0], dims[1], dims[2]), data)
            .map_err(|e| Error::Validation(e.to_string()))?,
        grid,
    })
}

pub fn write_histogram(h: &PhotonHistogram) -> Vec<u8> {
    let g = &h.geometry;
    let mut header = format!(
        "{HISTOGRAM_MAGIC}\n{} {} {}\n{} {}\n{} {}\n",
        g.num_pairs(),
        g.num_bins,
        h.pulses,
        g.bin_width,
        g.time_origin,
        h.rng_id,
        h.seed
    );
    for p in &g.pairs {
        header.push_str(&format!("{} {}\n", vec3(&p.illum), vec3(&p.detect)));
    }
    let mut out = header.into_bytes();
    for c in h.counts.iter() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

pub fn read_histogram(bytes: &[u8]) -> Result<PhotonHistogram> {
    let mut c = Cursor::new(bytes);
    c.magic(HISTOGRAM_MAGIC)?;
    let pqn = c.fields(3, "P Q N")?;
    let p: usize = parse(pqn[0], "P")?;
    let q: usize = parse(pqn[1], "Q")?;
    let pulses: u64 = parse(pqn[2], "N")?;
    let timing = c.fields(2, "bin_width time_origin")?;
    let bin_width: f64 = parse(timing[0], "bin width")?;
    let time_origin: f64 = parse(timing[1], "time origin")?;
    let rng = c.fields(2, "rng_id seed")?;
    let rng_id = rng[0].1.to_string();
    let seed: u64 = parse(rng[1], "seed")?;
    let mut pairs = Vec::with_capacity(p);
    for _ in 0..p {
        let f = c.fields(6, "pair line")?;
        pairs.push(MeasurementPair {
            illum: parse_vec3(&f[..3], "illumination point")?,
            detect: parse_vec3(&f[3..], "detection point")?,
        });
    }
    let geometry = MeasurementGeometry {
        pairs,
        bin_width,
        num_bins: q,
        time_origin,
        c: SPEED_OF_LIGHT,
    };
    geometry.validate()?;
    let payload = c.payload(4 * p * q)?;
    let counts: Vec<u32> = payload
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("chunk of 4")))
        .collect();
    let hist = PhotonHistogram {
        geometry,
        counts: Array2::from_shape_vec((p, q), counts).map_err(|e| Error::Validation(e.to_string()))?,
        pulses,
        rng_id,
        seed,
    };
    hist.validate()?;
    Ok(hist)
}

pub fn write_surface(s: &SurfaceG) -> Vec<u8> {
    let (ni, nj) = s.pixels.dim();
    let mut out = format!("{SURFACE_MAGIC}\n{ni} {nj}\n");
    for px in s.pixels.iter() {
        match px {
            Some(p) => out.push_str(&format!("1 {} {}\n", p.depth, p.albedo)),
            None => out.push_str("0 - -\n"),
        }
    }
    out.into_bytes()
}

/// Reads a surface onto `grid`; without one, a unit grid with `K` one past
/// the deepest foreground index is used.
pub fn read_surface(bytes: &[u8], grid: Option<&VoxelGrid>) -> Result<SurfaceG> {
    let mut c = Cursor::new(bytes);
    c.magic(SURFACE_MAGIC)?;
    let ij = c.fields(2, "I J")?;
    let ni: usize = parse(ij[0], "I")?;
    let nj: usize = parse(ij[1], "J")?;
    let mut records = Vec::with_capacity(ni * nj);
    for _ in 0..ni * nj {
        let f = c.fields(3, "surface record")?;
        let rec = match (f[0].1, f[1].1, f[2].1) {
            ("0", "-", "-") => None,
            ("1", _, _) => {
                let depth: usize = parse(f[1], "depth")?;
                let albedo: f64 = parse(f[2], "albedo")?;
                if !(albedo.is_finite() && albedo > 0.0) {
                    return Err(Error::Validation(format!(
                        "surface record at byte {}: foreground albedo must be positive",
                        f[0].0
                    )));
                }
                Some(SurfacePixel { depth, albedo })
            }
            _ => {
                return Err(Error::Validation(format!(
                    "surface record at byte {}: indicator, depth and albedo disagree",
                    f[0].0
                )))
            }
        };
        records.push(rec);
    }
    if c.pos != bytes.len() {
        return Err(format_err(c.pos, "trailing bytes after surface records"));
    }
    let grid = match grid {
        Some(g) => {
            if g.dims[0] != ni || g.dims[1] != nj {
                return Err(Error::mismatch(
                    format!("{}x{}", g.dims[0], g.dims[1]),
                    format!("{ni}x{nj}"),
                ));
            }
            g.clone()
        }
        None => {
            let k = records.iter().flatten().map(|p| p.depth + 1).max().unwrap_or(1);
            VoxelGrid::new([ni, nj, k], [0.0; 3], [1.0; 3])?
        }
    };
    let s = SurfaceG {
        pixels: Array2::from_shape_vec((ni, nj), records).map_err(|e| Error::Validation(e.to_string()))?,
        grid,
    };
    s.validate()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> VoxelGrid {
        VoxelGrid::from_extent([3, 2, 4], [-1.0, -1.0, 0.4], [2.0, 2.0, 0.4]).unwrap()
    }

    #[test]
    fn volume_round_trip() {
        let g = grid();
        let v = AlbedoVolume::from_vec(&g, (0..24).map(|i| (i as f64).sqrt() - 1.7).collect()).unwrap();
        let bytes = write_volume(&v);
        let back = read_volume(&bytes).unwrap();
        assert_eq!(back, v);
        assert_eq!(write_volume(&back), bytes);
    }

    #[test]
    fn truncated_volume_reports_offset() {
        let v = AlbedoVolume::zeros(&grid());
        let bytes = write_volume(&v);
        let cut = &bytes[..bytes.len() - 5];
        match read_volume(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, cut.len()),
            other => panic!("unexpected {other:?}"),
        }
        let mut long = bytes.clone();
        long.push(0);
        match read_volume(&long) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, bytes.len()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_at_zero() {
        assert!(matches!(read_volume(b"NLOSVOL2\n"), Err(Error::Format { offset: 0, .. })));
    }

    fn hist() -> PhotonHistogram {
        let geo = MeasurementGeometry::confocal_raster(2, 1, 0.25, [0.0, 0.0], 32e-12, 3).unwrap();
        PhotonHistogram {
            geometry: geo,
            counts: Array2::from_shape_vec((2, 3), vec![0, 4, 9, 1, 0, 10]).unwrap(),
            pulses: 10,
            rng_id: "chacha8-binstream-v1".into(),
            seed: 42,
        }
    }

    #[test]
    fn histogram_round_trip() {
        let h = hist();
        let bytes = write_histogram(&h);
        assert_eq!(read_histogram(&bytes).unwrap(), h);
    }

    #[test]
    fn histogram_counts_above_n_rejected() {
        let mut h = hist();
        h.counts[(1, 2)] = 11;
        match read_histogram(&write_histogram(&h)) {
            Err(Error::Validation(m)) => assert!(m.contains("p=1, q=2"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn surface_round_trip_and_linkage() {
        let g = grid();
        let mut s = SurfaceG::empty(&g);
        s.pixels[(0, 1)] = Some(SurfacePixel {
            depth: 3,
            albedo: 0.125,
        });
        s.pixels[(2, 0)] = Some(SurfacePixel {
            depth: 0,
            albedo: 1.0 / 3.0,
        });
        let bytes = write_surface(&s);
        assert_eq!(read_surface(&bytes, Some(&g)).unwrap(), s);
        let loose = read_surface(&bytes, None).unwrap();
        assert_eq!(loose.pixels, s.pixels);
        let text = String::from_utf8(bytes).unwrap().replacen("0 - -", "0 2 -", 1);
        assert!(matches!(read_surface(text.as_bytes(), Some(&g)), Err(Error::Validation(_))));
        let text = String::from_utf8(write_surface(&s)).unwrap().replacen("1 3 0.125", "1 3 0", 1);
        assert!(matches!(read_surface(text.as_bytes(), Some(&g)), Err(Error::Validation(_))));
    }
}
