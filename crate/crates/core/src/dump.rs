//! Binary accumulator dump for estimator replay without re-simulation.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic  "HSVACC1\0"                       8 bytes
//! count  u64                               8 bytes
//! count records of 21 f64:
//!   s_t v_t r_t rate_integral inv_vol_w1 inv_vol_w2 inv_vol_w3
//!   vol_integral inv_vol_integral w1_t bismut_v0 bismut_r0
//!   y12_t y13_t y22_t y33_t
//!   rate_adjustment inv_vdiff_w2 inv_vdiff_w3 inv_rdiff_w3 clamps
//! ```

use std::io::Write;

use crate::engine::PathAccumulators;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HSVACC1\0";
pub const HEADER_LEN: usize = 16;
pub const FIELDS: usize = 21;
pub const RECORD_LEN: usize = FIELDS * 8;

fn fields(p: &PathAccumulators) -> [f64; FIELDS] {
    [
        p.s_t,
        p.v_t,
        p.r_t,
        p.rate_integral,
        p.inv_vol_w1,
        p.inv_vol_w2,
        p.inv_vol_w3,
        p.vol_integral,
        p.inv_vol_integral,
        p.w1_t,
        p.bismut_v0,
        p.bismut_r0,
        p.y12_t,
        p.y13_t,
        p.y22_t,
        p.y33_t,
        p.rate_adjustment,
        p.inv_vdiff_w2,
        p.inv_vdiff_w3,
        p.inv_rdiff_w3,
        p.clamps as f64,
    ]
}

pub fn write_accumulators<W: Write>(mut out: W, paths: &[PathAccumulators]) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(paths.len() as u64).to_le_bytes())?;
    for p in paths {
        for x in fields(p) {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn encode(paths: &[PathAccumulators]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + paths.len() * RECORD_LEN);
    write_accumulators(&mut buf, paths).expect("writing to a Vec cannot fail");
    buf
}

pub fn decode(bytes: &[u8]) -> Result<Vec<PathAccumulators>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Decode(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Decode("bad magic".into()));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    let expected = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(RECORD_LEN))
        .ok_or_else(|| Error::Decode(format!("record count {count} overflows")))?;
    if body.len() != expected {
        return Err(Error::Decode(format!(
            "header declares {count} records ({expected} bytes) but body has {} bytes",
            body.len()
        )));
    }
    body.chunks_exact(RECORD_LEN)
        .map(|rec| {
            let mut f = [0.0; FIELDS];
            for (x, chunk) in f.iter_mut().zip(rec.chunks_exact(8)) {
                *x = f64::from_le_bytes(chunk.try_into().unwrap());
            }
            let clamps = f[20];
            if !(clamps.is_sign_positive() && clamps <= u32::MAX as f64 && clamps.fract() == 0.0) {
                return Err(Error::Decode(format!("clamp count {clamps} is not a u32")));
            }
            Ok(PathAccumulators {
                s_t: f[0],
                v_t: f[1],
                r_t: f[2],
                rate_integral: f[3],
                inv_vol_w1: f[4],
                inv_vol_w2: f[5],
                inv_vol_w3: f[6],
                vol_integral: f[7],
                inv_vol_integral: f[8],
                w1_t: f[9],
                bismut_v0: f[10],
                bismut_r0: f[11],
                y12_t: f[12],
                y13_t: f[13],
                y22_t: f[14],
                y33_t: f[15],
                rate_adjustment: f[16],
                inv_vdiff_w2: f[17],
                inv_vdiff_w3: f[18],
                inv_rdiff_w3: f[19],
                clamps: clamps as u32,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(seed: f64, clamps: u32) -> PathAccumulators {
        PathAccumulators {
            s_t: seed,
            v_t: seed * 2.0,
            bismut_v0: f64::NAN,
            y33_t: -seed,
            inv_rdiff_w3: 1e300,
            clamps,
            ..Default::default()
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&[record(1.0, 0), record(2.0, 3)]);
        assert_eq!(&bytes[..8], b"HSVACC1\0");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 16 + 2 * 168);
        // first field of the second record
        assert_eq!(f64::from_le_bytes(bytes[16 + 168..16 + 176].try_into().unwrap()), 2.0);
    }

    #[test]
    fn rejects_malformed() {
        assert!(decode(b"HSVACC1").is_err());
        assert!(decode(b"HSVACC2\0\0\0\0\0\0\0\0\0").is_err());
        let mut bytes = encode(&[record(1.0, 0)]);
        bytes.pop();
        assert!(decode(&bytes).is_err());
        let mut huge = MAGIC.to_vec();
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode(&huge).is_err());
        let mut frac = encode(&[record(1.0, 0)]);
        let at = HEADER_LEN + 20 * 8;
        frac[at..at + 8].copy_from_slice(&0.5f64.to_le_bytes());
        assert!(decode(&frac).is_err());
        // would not re-encode to the same bytes
        frac[at..at + 8].copy_from_slice(&(-0.0f64).to_le_bytes());
        assert!(decode(&frac).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(xs in proptest::collection::vec((any::<f64>(), any::<u32>()), 0..20)) {
            let recs: Vec<_> = xs.iter().map(|&(x, c)| record(x, c)).collect();
            let back = decode(&encode(&recs)).unwrap();
            prop_assert_eq!(encode(&back), encode(&recs));
        }
    }
}
