use std::collections::HashMap;
use std::path::Path;

use super::FeatureTable;
use crate::error::{Error, Result};

/// Fixed-width bitvector. Bit 0 is the most significant bit of the first hex digit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    width: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn zeros(width: usize) -> Self {
        Self {
            width,
            words: vec![0; width.div_ceil(64)],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn set(&mut self, bit: usize, on: bool) {
        assert!(bit < self.width, "bit {bit} out of range");
        let mask = 1u64 << (bit % 64);
        if on {
            self.words[bit / 64] |= mask;
        } else {
            self.words[bit / 64] &= !mask;
        }
    }

    pub fn get(&self, bit: usize) -> bool {
        bit < self.width && self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    /// Parse a string of `0`/`1` characters.
    pub fn from_bit_str(bits: &str) -> Result<Self> {
        let mut fp = Fingerprint::zeros(bits.len());
        for (i, c) in bits.chars().enumerate() {
            match c {
                '1' => fp.set(i, true),
                '0' => {}
                _ => return Err(Error::InvalidArgument(format!("bad bit character `{c}`"))),
            }
        }
        Ok(fp)
    }

    pub fn from_hex(s: &str, width: usize) -> Result<Self> {
        if s.len() != width.div_ceil(4) {
            return Err(Error::WidthMismatch(s.len() * 4, width));
        }
        let bytes = if s.len() % 2 == 1 {
            hex::decode(format!("{s}0"))
        } else {
            hex::decode(s)
        }
        .map_err(|e| Error::InvalidArgument(format!("bad fingerprint hex: {e}")))?;
        let mut fp = Fingerprint::zeros(width);
        for bit in 0..width {
            if bytes[bit / 8] >> (7 - bit % 8) & 1 == 1 {
                fp.set(bit, true);
            }
        }
        Ok(fp)
    }

    pub fn to_hex(&self) -> String {
        let mut bytes = vec![0u8; self.width.div_ceil(8)];
        for bit in 0..self.width {
            if self.get(bit) {
                bytes[bit / 8] |= 1 << (7 - bit % 8);
            }
        }
        let mut s = hex::encode(bytes);
        s.truncate(self.width.div_ceil(4));
        s
    }

    /// Bits as 0.0/1.0 reals.
    pub fn to_reals(&self) -> Vec<f64> {
        (0..self.width)
            .map(|b| if self.get(b) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Fingerprints keyed by row id; all of one width.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintTable {
    width: usize,
    row_ids: Vec<String>,
    bits: Vec<Fingerprint>,
    index: HashMap<String, usize>,
}

impl FingerprintTable {
    pub fn new(width: usize, row_ids: Vec<String>, bits: Vec<Fingerprint>) -> Result<Self> {
        if row_ids.len() != bits.len() {
            return Err(Error::InvalidArgument("id/fingerprint count mismatch".into()));
        }
        let mut index = HashMap::with_capacity(row_ids.len());
        for (i, (id, fp)) in row_ids.iter().zip(&bits).enumerate() {
            if fp.width() != width {
                return Err(Error::WidthMismatch(fp.width(), width));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateRowId(id.clone()));
            }
        }
        Ok(Self {
            width,
            row_ids,
            bits,
            index,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn get(&self, id: &str) -> Option<&Fingerprint> {
        self.index.get(id).map(|&i| &self.bits[i])
    }

    /// Every fingerprint id must name a row of `table`.
    pub fn check_subset_of(&self, table: &FeatureTable) -> Result<()> {
        let ids: std::collections::HashSet<&str> =
            table.row_ids().iter().map(String::as_str).collect();
        match self.row_ids.iter().find(|id| !ids.contains(id.as_str())) {
            Some(id) => Err(Error::UnknownRow(id.clone())),
            None => Ok(()),
        }
    }

    /// Reads `id,fp_hex`.
    pub fn load(path: &Path, width: usize) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let mut ids = Vec::new();
        let mut bits = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: e.to_string(),
            })?;
            let (Some(id), Some(hex)) = (rec.get(0), rec.get(1)) else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 2,
                    msg: "expected `id,fp_hex`".into(),
                });
            };
            ids.push(id.to_string());
            bits.push(Fingerprint::from_hex(hex, width)?);
        }
        Self::new(width, ids, bits)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::from("id,fp_hex\n");
        for (id, fp) in self.row_ids.iter().zip(&self.bits) {
            out.push_str(id);
            out.push(',');
            out.push_str(&fp.to_hex());
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bit_string_and_hex_agree() {
        let fp = Fingerprint::from_bit_str("11000001").unwrap();
        assert_eq!(fp.to_hex(), "c1");
        assert_eq!(Fingerprint::from_hex("c1", 8).unwrap(), fp);
        assert_eq!(fp.count_ones(), 3);
    }

    #[test]
    fn hex_length_must_match_width() {
        assert!(matches!(
            Fingerprint::from_hex("c1", 16),
            Err(Error::WidthMismatch(8, 16))
        ));
    }

    proptest! {
        #[test]
        fn hex_round_trip(bits in proptest::collection::vec(any::<bool>(), 1..300)) {
            let mut fp = Fingerprint::zeros(bits.len());
            for (i, &b) in bits.iter().enumerate() {
                fp.set(i, b);
            }
            prop_assert_eq!(Fingerprint::from_hex(&fp.to_hex(), bits.len()).unwrap(), fp);
        }
    }
}
