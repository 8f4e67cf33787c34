//! Little-endian read/write helpers for the archive file format.

use crate::error::{Error, Result};
use std::io::{Read, Write};

macro_rules! rw_int {
    ($write:ident, $read:ident, $ty:ty) => {
        pub fn $write<W: Write>(w: &mut W, v: $ty) -> Result<()> {
            w.write_all(&v.to_le_bytes())?;
            Ok(())
        }

        pub fn $read<R: Read>(r: &mut R) -> Result<$ty> {
            let mut buf = [0u8; std::mem::size_of::<$ty>()];
            r.read_exact(&mut buf)
                .map_err(|e| Error::Format(format!("truncated input: {e}")))?;
            Ok(<$ty>::from_le_bytes(buf))
        }
    };
}

rw_int!(write_u8, read_u8, u8);
rw_int!(write_u16, read_u16, u16);
rw_int!(write_u32, read_u32, u32);
rw_int!(write_u64, read_u64, u64);
rw_int!(write_f64, read_f64, f64);
