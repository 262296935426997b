//! The `CFAD` dataset container.
//!
//! Little-endian throughout. Layout, in order:
//!
//! | field | type |
//! |---|---|
//! | magic `"CFAD"` | 4 bytes |
//! | format version | u32 |
//! | M, N, K, L, num_slots | 5 x u32 |
//! | mode flags: bit 0 = cellular topology, bit 1 = static-block fading | u32 |
//! | fading block length (0 for per-slot fading) | u32 |
//! | master seed, slot stream | 2 x u64 |
//! | epsilon, noise variance (W), shadowing sigma (dB) | 3 x f64 |
//! | geometry: area side, edge margin, min device-AP distance, min AP spacing, AP height, device height, carrier (Hz) | 7 x f64 |
//! | AP positions `[m][x,y]` | M x 2 x f64 |
//! | device positions `[k][x,y]` | K x 2 x f64 |
//! | transmit powers (W) | K x f64 |
//! | attenuation beta (dB) `[m][k]` | M x K x f64 |
//! | shadowing (dB) `[m][k]` | M x K x f64 |
//! | pilots `[l][k]` as (re, im) | L x K x 2 x f64 |
//! | activity, `ceil(K/8)` bytes per slot, device k in bit `k % 8` of byte `k / 8` | num_slots x ceil(K/8) |
//! | received signals `[slot][ap][symbol][antenna]` as (re, im) | num_slots x M x L x N x 2 x f32 |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use num_complex::{Complex32, Complex64};

use super::{AccessSlot, AccessSlotDataset, ActivityVector, PilotCodebook};
use crate::channel::{FadingMode, GeometryConfig, LargeScaleMap, NetworkTopology, TopologyMode};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"CFAD";
pub const DATASET_FORMAT_VERSION: u32 = 1;

const FLAG_CELLULAR: u32 = 1;
const FLAG_STATIC_BLOCK: u32 = 2;

/// Fixed-size leading part of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub num_aps: usize,
    pub num_antennas: usize,
    pub num_devices: usize,
    pub pilot_len: usize,
    pub num_slots: usize,
    pub topology_mode: TopologyMode,
    pub fading_mode: FadingMode,
    pub master_seed: u64,
    pub slot_stream: u64,
    pub epsilon: f64,
    pub noise_var_w: f64,
    pub shadow_sigma_db: f64,
    pub geometry: GeometryConfig,
}

impl DatasetHeader {
    const BYTES: u64 = 4 + 4 + 5 * 4 + 4 + 4 + 2 * 8 + 3 * 8 + 7 * 8;

    fn payload_bytes(&self) -> u64 {
        let (m, n, k, l, s) = (
            self.num_aps as u64,
            self.num_antennas as u64,
            self.num_devices as u64,
            self.pilot_len as u64,
            self.num_slots as u64,
        );
        8 * (2 * m + 2 * k + k + 2 * m * k + 2 * l * k) + s * k.div_ceil(8) + s * m * l * n * 8
    }

    /// Expected size of the whole file.
    pub fn file_bytes(&self) -> u64 {
        Self::BYTES + self.payload_bytes()
    }
}

pub(crate) struct Writer<W: Write>(pub W);

impl<W: Write> Writer<W> {
    pub(crate) fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    pub(crate) fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    pub(crate) fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f32(&mut self, v: f32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    pub(crate) fn dim(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Config(format!("dimension {v} does not fit in 32 bits")))?;
        self.u32(v)
    }
}

pub(crate) struct Reader<R: Read>(pub R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::CorruptHeader("file is truncated".into()),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }
    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }
    pub(crate) fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got: [u8; 4] = self.bytes()?;
        if &got != want {
            return Err(Error::CorruptHeader(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(want)
            )));
        }
        Ok(())
    }
}

pub fn save_dataset(dataset: &AccessSlotDataset, path: &Path) -> Result<()> {
    let mut w = Writer(BufWriter::new(File::create(path)?));
    let (m, n, k, l) = (
        dataset.num_aps(),
        dataset.num_antennas,
        dataset.num_devices(),
        dataset.pilot_len(),
    );
    let g = &dataset.topology.geometry;

    w.0.write_all(DATASET_MAGIC)?;
    w.u32(DATASET_FORMAT_VERSION)?;
    for d in [m, n, k, l, dataset.len()] {
        w.dim(d)?;
    }
    let mut flags = 0;
    if g.topology_mode == TopologyMode::Cellular {
        flags |= FLAG_CELLULAR;
    }
    let block_len = match dataset.fading_mode {
        FadingMode::PerSlot => 0,
        FadingMode::StaticBlock { block_len } => {
            flags |= FLAG_STATIC_BLOCK;
            block_len
        }
    };
    w.u32(flags)?;
    w.dim(block_len)?;
    w.u64(dataset.master_seed)?;
    w.u64(dataset.slot_stream)?;
    for v in [dataset.epsilon, dataset.noise_var_w, dataset.lsf_map.shadow_sigma_db] {
        w.f64(v)?;
    }
    for v in [
        g.area_side_m,
        g.edge_margin_m,
        g.min_device_ap_dist_m,
        g.min_ap_spacing_m,
        g.ap_height_m,
        g.device_height_m,
        g.carrier_freq_hz,
    ] {
        w.f64(v)?;
    }

    for p in dataset.topology.ap_positions.iter().chain(&dataset.topology.device_positions) {
        w.f64(p[0])?;
        w.f64(p[1])?;
    }
    for &p in &dataset.tx_power_w {
        w.f64(p)?;
    }
    for &b in dataset.lsf_map.beta_db.iter() {
        w.f64(b)?;
    }
    for &f in dataset.lsf_map.shadowing_db.iter() {
        w.f64(f)?;
    }
    for z in dataset.codebook.s.iter() {
        w.f64(z.re)?;
        w.f64(z.im)?;
    }

    let mut packed = vec![0u8; k.div_ceil(8)];
    for slot in &dataset.slots {
        packed.fill(0);
        for (i, &on) in slot.activity.a.iter().enumerate() {
            if on {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        w.0.write_all(&packed)?;
    }
    for slot in &dataset.slots {
        for y in &slot.received {
            // standard (row-major) iteration order: [symbol][antenna]
            for z in y.iter() {
                w.f32(z.re)?;
                w.f32(z.im)?;
            }
        }
    }
    w.0.flush()?;
    Ok(())
}

fn read_header<R: Read>(r: &mut Reader<R>) -> Result<DatasetHeader> {
    r.magic(DATASET_MAGIC)?;
    let version = r.u32()?;
    if version != DATASET_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let [num_aps, num_antennas, num_devices, pilot_len, num_slots] = dims;
    if dims.contains(&0) {
        return Err(Error::CorruptHeader(format!("zero dimension in {dims:?}")));
    }
    let flags = r.u32()?;
    if flags & !(FLAG_CELLULAR | FLAG_STATIC_BLOCK) != 0 {
        return Err(Error::CorruptHeader(format!("unknown mode flags {flags:#x}")));
    }
    let block_len = r.u32()? as usize;
    let fading_mode = if flags & FLAG_STATIC_BLOCK != 0 {
        if block_len == 0 {
            return Err(Error::CorruptHeader("static-block fading with zero block length".into()));
        }
        FadingMode::StaticBlock { block_len }
    } else {
        FadingMode::PerSlot
    };
    let topology_mode = if flags & FLAG_CELLULAR != 0 {
        TopologyMode::Cellular
    } else {
        TopologyMode::CellFree
    };
    let master_seed = r.u64()?;
    let slot_stream = r.u64()?;
    let epsilon = r.f64()?;
    let noise_var_w = r.f64()?;
    let shadow_sigma_db = r.f64()?;
    let mut geo = [0f64; 7];
    for v in &mut geo {
        *v = r.f64()?;
    }
    Ok(DatasetHeader {
        version,
        num_aps,
        num_antennas,
        num_devices,
        pilot_len,
        num_slots,
        topology_mode,
        fading_mode,
        master_seed,
        slot_stream,
        epsilon,
        noise_var_w,
        shadow_sigma_db,
        geometry: GeometryConfig {
            area_side_m: geo[0],
            edge_margin_m: geo[1],
            min_device_ap_dist_m: geo[2],
            min_ap_spacing_m: geo[3],
            ap_height_m: geo[4],
            device_height_m: geo[5],
            carrier_freq_hz: geo[6],
            num_aps,
            num_devices,
            topology_mode,
        },
    })
}

/// Parses only the fixed-size header; the payload is not touched.
pub fn read_dataset_header(path: &Path) -> Result<DatasetHeader> {
    let mut r = Reader(BufReader::new(File::open(path)?));
    read_header(&mut r)
}

pub fn load_dataset(path: &Path) -> Result<AccessSlotDataset> {
    let file = File::open(path)?;
    let actual_len = file.metadata()?.len();
    let mut r = Reader(BufReader::new(file));
    let h = read_header(&mut r)?;
    if actual_len != h.file_bytes() {
        return Err(Error::CorruptHeader(format!(
            "file holds {actual_len} bytes but its header describes {}",
            h.file_bytes()
        )));
    }
    let (m, n, k, l) = (h.num_aps, h.num_antennas, h.num_devices, h.pilot_len);

    let point = |r: &mut Reader<_>| -> Result<[f64; 2]> { Ok([r.f64()?, r.f64()?]) };
    let ap_positions = (0..m).map(|_| point(&mut r)).collect::<Result<Vec<_>>>()?;
    let device_positions = (0..k).map(|_| point(&mut r)).collect::<Result<Vec<_>>>()?;
    let tx_power_w = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let matrix = |r: &mut Reader<_>| -> Result<Array2<f64>> {
        let v = (0..m * k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Array2::from_shape_vec((m, k), v).expect("shape matches length"))
    };
    let beta_db = matrix(&mut r)?;
    let shadowing_db = matrix(&mut r)?;
    let pilots = (0..l * k)
        .map(|_| Ok(Complex64::new(r.f64()?, r.f64()?)))
        .collect::<Result<Vec<_>>>()?;
    let s = Array2::from_shape_vec((l, k), pilots).expect("shape matches length");

    let mut packed = vec![0u8; k.div_ceil(8)];
    let mut activities = Vec::with_capacity(h.num_slots);
    for _ in 0..h.num_slots {
        r.0.read_exact(&mut packed)?;
        activities.push((0..k).map(|i| packed[i / 8] & (1 << (i % 8)) != 0).collect::<Vec<_>>());
    }
    let mut slots = Vec::with_capacity(h.num_slots);
    for a in activities {
        let mut received = Vec::with_capacity(m);
        for _ in 0..m {
            let v = (0..l * n)
                .map(|_| Ok(Complex32::new(r.f32()?, r.f32()?)))
                .collect::<Result<Vec<_>>>()?;
            received.push(Array2::from_shape_vec((l, n), v).expect("shape matches length"));
        }
        slots.push(AccessSlot {
            activity: ActivityVector { a, epsilon: h.epsilon },
            received,
        });
    }

    Ok(AccessSlotDataset {
        codebook: PilotCodebook { s },
        topology: NetworkTopology {
            ap_positions,
            device_positions,
            geometry: h.geometry.clone(),
        },
        lsf_map: LargeScaleMap::from_db(beta_db, shadowing_db, h.shadow_sigma_db),
        tx_power_w,
        noise_var_w: h.noise_var_w,
        epsilon: h.epsilon,
        num_antennas: n,
        fading_mode: h.fading_mode,
        master_seed: h.master_seed,
        slot_stream: h.slot_stream,
        format_version: h.version,
        slots,
    })
}
