//! The cluster's software-managed scratchpad memory.
//!
//! A flat byte image with little-endian typed accessors. There are no
//! caches anywhere in the cluster; every stream and every load/store in
//! the kernels resolves against this image. Bank mapping is word
//! interleaved: bank = (address / 8) mod n_banks.

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum SpmError {
    #[error("access at {addr:#x}+{len} outside SPM of {size} bytes")]
    OutOfBounds { addr: u32, len: u32, size: u32 },
    #[error("SPM allocation of {want} bytes exceeds remaining {left} of {size}")]
    Exhausted { want: u32, left: u32, size: u32 },
}

#[derive(Clone)]
pub struct Spm {
    data: Vec<u8>,
}

impl Spm {
    pub fn new(size_bytes: u32) -> Spm {
        Spm {
            data: vec![0; size_bytes as usize],
        }
    }

    pub fn len(&self) -> u32 {
        self.data.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn check_range(&self, addr: u32, len: u32) -> Result<(), SpmError> {
        if addr as u64 + len as u64 > self.data.len() as u64 {
            return Err(SpmError::OutOfBounds {
                addr,
                len,
                size: self.len(),
            });
        }
        Ok(())
    }

    pub fn read_u8(&self, addr: u32) -> Result<u8, SpmError> {
        self.check_range(addr, 1)?;
        Ok(self.data[addr as usize])
    }

    pub fn read_u16(&self, addr: u32) -> Result<u16, SpmError> {
        self.check_range(addr, 2)?;
        let a = addr as usize;
        Ok(u16::from_le_bytes([self.data[a], self.data[a + 1]]))
    }

    pub fn read_u32(&self, addr: u32) -> Result<u32, SpmError> {
        self.check_range(addr, 4)?;
        let a = addr as usize;
        Ok(u32::from_le_bytes(
            self.data[a..a + 4].try_into().unwrap(),
        ))
    }

    pub fn read_u64(&self, addr: u32) -> Result<u64, SpmError> {
        self.check_range(addr, 8)?;
        let a = addr as usize;
        Ok(u64::from_le_bytes(
            self.data[a..a + 8].try_into().unwrap(),
        ))
    }

    pub fn write_u16(&mut self, addr: u32, v: u16) -> Result<(), SpmError> {
        self.check_range(addr, 2)?;
        self.data[addr as usize..addr as usize + 2].copy_from_slice(&v.to_le_bytes());
        Ok(())
    }

    pub fn write_u32(&mut self, addr: u32, v: u32) -> Result<(), SpmError> {
        self.check_range(addr, 4)?;
        self.data[addr as usize..addr as usize + 4].copy_from_slice(&v.to_le_bytes());
        Ok(())
    }

    pub fn write_u64(&mut self, addr: u32, v: u64) -> Result<(), SpmError> {
        self.check_range(addr, 8)?;
        self.data[addr as usize..addr as usize + 8].copy_from_slice(&v.to_le_bytes());
        Ok(())
    }

    pub fn write_u8(&mut self, addr: u32, v: u8) -> Result<(), SpmError> {
        self.check_range(addr, 1)?;
        self.data[addr as usize] = v;
        Ok(())
    }

    pub fn bytes(&self, addr: u32, len: u32) -> Result<&[u8], SpmError> {
        self.check_range(addr, len)?;
        Ok(&self.data[addr as usize..(addr + len) as usize])
    }

    /// Read an element of 1/2/4/8 bytes, zero-extended.
    pub fn read_elem(&self, addr: u32, elem_bytes: u8) -> Result<u64, SpmError> {
        match elem_bytes {
            1 => self.read_u8(addr).map(u64::from),
            2 => self.read_u16(addr).map(u64::from),
            4 => self.read_u32(addr).map(u64::from),
            8 => self.read_u64(addr),
            _ => panic!("unsupported element width {elem_bytes}"),
        }
    }

    pub fn write_elem(&mut self, addr: u32, elem_bytes: u8, v: u64) -> Result<(), SpmError> {
        match elem_bytes {
            1 => self.write_u8(addr, v as u8),
            2 => self.write_u16(addr, v as u16),
            4 => self.write_u32(addr, v as u32),
            8 => self.write_u64(addr, v),
            _ => panic!("unsupported element width {elem_bytes}"),
        }
    }
}

/// Word-interleaved bank index for an address.
pub fn bank_of(addr: u32, n_banks: u32) -> u32 {
    (addr / 8) % n_banks
}

/// A bump allocator over the SPM address space, 8-byte aligned.
pub struct SpmAlloc {
    next: u32,
    size: u32,
}

impl SpmAlloc {
    pub fn new(size: u32) -> SpmAlloc {
        SpmAlloc { next: 0, size }
    }

    pub fn alloc(&mut self, bytes: u32) -> Result<u32, SpmError> {
        let aligned = bytes.div_ceil(8) * 8;
        if self.next + aligned > self.size {
            return Err(SpmError::Exhausted {
                want: aligned,
                left: self.size - self.next,
                size: self.size,
            });
        }
        let base = self.next;
        self.next += aligned;
        Ok(base)
    }

    pub fn used(&self) -> u32 {
        self.next
    }

    pub fn remaining(&self) -> u32 {
        self.size - self.next
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rw_roundtrip() {
        let mut spm = Spm::new(64);
        spm.write_u64(8, 0x0102_0304_0506_0708).unwrap();
        assert_eq!(spm.read_u64(8).unwrap(), 0x0102_0304_0506_0708);
        assert_eq!(spm.read_u16(8).unwrap(), 0x0708); // little endian
        assert!(spm.read_u64(60).is_err());
    }

    #[test]
    fn bank_mapping_is_word_interleaved() {
        assert_eq!(bank_of(0, 32), 0);
        assert_eq!(bank_of(7, 32), 0);
        assert_eq!(bank_of(8, 32), 1);
        assert_eq!(bank_of(8 * 32, 32), 0);
    }

    #[test]
    fn alloc_bumps_and_exhausts() {
        let mut a = SpmAlloc::new(32);
        assert_eq!(a.alloc(5).unwrap(), 0);
        assert_eq!(a.alloc(8).unwrap(), 8); // previous rounded up to 8
        assert!(a.alloc(24).is_err());
        assert_eq!(a.remaining(), 16);
    }
}
