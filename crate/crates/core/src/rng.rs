//! Counter-based normal draws.
//!
//! Every Gaussian increment is a pure function of `(seed, path, step, driver)`,
//! so a path can be regenerated on any worker in any order, and bumped
//! re-simulations see exactly the same noise.

const PHILOX_M0: u64 = 0xD2E7_470E_E14C_6C93;
const PHILOX_M1: u64 = 0xCA5A_8263_9512_1157;
const PHILOX_W0: u64 = 0x9E37_79B9_7F4A_7C15;
const PHILOX_W1: u64 = 0xBB67_AE85_84CA_A73B;

/// Stream tag mixed into the second key word.
const STREAM_TAG: u64 = 0x4853_5647_5245_454B;

#[inline(always)]
fn mulhilo(a: u64, b: u64) -> (u64, u64) {
    let p = (a as u128) * (b as u128);
    ((p >> 64) as u64, p as u64)
}

/// Philox4x64 with 10 rounds.
#[inline]
pub fn philox4x64_10(counter: [u64; 4], key: [u64; 2]) -> [u64; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// Maps 64 random bits to the open interval (0, 1).
#[inline]
pub fn open_unit(x: u64) -> f64 {
    ((x >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Source of the three independent standard normals driving one step.
pub trait NormalSource: Sync {
    fn normals(&self, path: u64, step: u64) -> [f64; 3];
}

/// Philox-keyed Box-Muller normals; driver `i` uses output lane `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhiloxNormals {
    seed: u64,
}

impl PhiloxNormals {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl NormalSource for PhiloxNormals {
    #[inline]
    fn normals(&self, path: u64, step: u64) -> [f64; 3] {
        let x = philox4x64_10([step, path, 0, 0], [self.seed, STREAM_TAG]);
        let (z0, z1) = box_muller(open_unit(x[0]), open_unit(x[1]));
        let (z2, _) = box_muller(open_unit(x[2]), open_unit(x[3]));
        [z0, z1, z2]
    }
}

#[inline]
fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    let radius = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (radius * c, radius * s)
}
