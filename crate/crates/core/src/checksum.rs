use crc::{Crc, CRC_64_XZ};

/// CRC-64/XZ (ECMA-182 polynomial, reflected, init and xorout all ones).
/// Used for file trailers and config hashes.
pub const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub fn crc64(bytes: &[u8]) -> u64 {
    CRC64.checksum(bytes)
}
