//! One party's append-only file of record shares.
//!
//! Layout: `magic ‖ u16 version ‖ u8 party ‖ u8 mode ‖ 16-byte modulus ‖ u16 N ‖ u16 T ‖ u64 count`,
//! followed by `count` records of `N + 2T` share encodings each.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::field::Field;
use crate::query::SharedRecord;
use crate::sharing::{Mode, PartyId, Share};

pub const DB_MAGIC: &[u8; 16] = b"MPCCDSS-SHAREDB\0";
pub const DB_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16 + 2 + 1 + 1 + 16 + 2 + 2 + 8;
const COUNT_OFFSET: u64 = (HEADER_LEN - 8) as u64;

#[derive(Debug, Error)]
pub enum DbError {
    #[error("corrupt database: {0}")]
    Corrupt(String),
    #[error("database does not match configuration: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Public shape of a share database.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DbHeader {
    pub party: PartyId,
    pub mode: Mode,
    pub field: Field,
    pub n_bits: u16,
    pub n_treatments: u16,
}

impl DbHeader {
    pub fn record_elements(&self) -> usize {
        self.n_bits as usize + 2 * self.n_treatments as usize
    }

    fn record_bytes(&self) -> usize {
        self.record_elements() * self.mode.share_bytes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareDatabase {
    pub header: DbHeader,
    pub records: Vec<SharedRecord>,
}

impl ShareDatabase {
    pub fn new(header: DbHeader) -> ShareDatabase {
        ShareDatabase {
            header,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn write_header(&self, w: &mut impl Write, count: u64) -> std::io::Result<()> {
        let h = &self.header;
        w.write_all(DB_MAGIC)?;
        w.write_all(&DB_VERSION.to_be_bytes())?;
        w.write_all(&[h.party.as_u8(), h.mode.to_byte()])?;
        w.write_all(&h.field.modulus().to_le_bytes())?;
        w.write_all(&h.n_bits.to_be_bytes())?;
        w.write_all(&h.n_treatments.to_be_bytes())?;
        w.write_all(&count.to_be_bytes())
    }

    fn encode_record(rec: &SharedRecord, out: &mut Vec<u8>) {
        for s in rec.iter() {
            s.encode_into(out);
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        self.write_header(w, self.records.len() as u64)?;
        let mut buf = Vec::with_capacity(self.header.record_bytes());
        for r in &self.records {
            buf.clear();
            Self::encode_record(r, &mut buf);
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<ShareDatabase, DbError> {
        let mut head = [0u8; HEADER_LEN];
        r.read_exact(&mut head).map_err(|_| DbError::Corrupt("truncated header".into()))?;
        if &head[..16] != DB_MAGIC {
            return Err(DbError::Corrupt("bad magic".into()));
        }
        let version = u16::from_be_bytes([head[16], head[17]]);
        if version != DB_VERSION {
            return Err(DbError::Corrupt(format!("unsupported version {version}")));
        }
        let party = PartyId::new(head[18]).ok_or_else(|| DbError::Corrupt("bad party id".into()))?;
        let mode = Mode::from_byte(head[19]).ok_or_else(|| DbError::Corrupt("bad mode".into()))?;
        let modulus = u128::from_le_bytes(head[20..36].try_into().unwrap());
        let field = Field::new(modulus).map_err(|e| DbError::Corrupt(e.to_string()))?;
        let header = DbHeader {
            party,
            mode,
            field,
            n_bits: u16::from_be_bytes([head[36], head[37]]),
            n_treatments: u16::from_be_bytes([head[38], head[39]]),
        };
        let count = u64::from_be_bytes(head[40..48].try_into().unwrap());
        let (n, t) = (header.n_bits as usize, header.n_treatments as usize);
        let sb = mode.share_bytes();
        let mut buf = vec![0u8; header.record_bytes()];
        let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
        for i in 0..count {
            r.read_exact(&mut buf)
                .map_err(|_| DbError::Corrupt(format!("truncated at record {i} of {count}")))?;
            let shares = buf
                .chunks_exact(sb)
                .map(|c| Share::decode(&field, mode, c))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| DbError::Corrupt(format!("record {i}: {e}")))?;
            records.push(SharedRecord::from_flat(shares, n, t).map_err(|e| DbError::Corrupt(e.to_string()))?);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(DbError::Corrupt("trailing bytes after last record".into()));
        }
        Ok(ShareDatabase { header, records })
    }

    pub fn load(path: &Path) -> Result<ShareDatabase, DbError> {
        ShareDatabase::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn persist(&self, path: &Path) -> Result<(), DbError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Checks the stored shape against the running configuration.
    pub fn check_header(&self, expected: &DbHeader) -> Result<(), DbError> {
        let h = &self.header;
        let field = |name: &str, a: String, b: String| {
            Err(DbError::Mismatch(format!("{name}: file has {a}, config has {b}")))
        };
        if h.party != expected.party {
            return field("party", h.party.to_string(), expected.party.to_string());
        }
        if h.mode != expected.mode {
            return field("mode", h.mode.to_string(), expected.mode.to_string());
        }
        if h.field != expected.field {
            return field(
                "modulus",
                h.field.modulus().to_string(),
                expected.field.modulus().to_string(),
            );
        }
        if h.n_bits != expected.n_bits {
            return field("n_bits", h.n_bits.to_string(), expected.n_bits.to_string());
        }
        if h.n_treatments != expected.n_treatments {
            return field("n_treatments", h.n_treatments.to_string(), expected.n_treatments.to_string());
        }
        Ok(())
    }
}

/// A database bound to its file; appends go to disk before they become visible.
#[derive(Debug)]
pub struct DatabaseFile {
    pub db: ShareDatabase,
    path: PathBuf,
}

impl DatabaseFile {
    /// Loads `path` if it exists (refusing a corrupt or mismatched file), otherwise creates it.
    pub fn open_or_create(path: &Path, header: DbHeader) -> Result<DatabaseFile, DbError> {
        let db = if path.exists() {
            let db = ShareDatabase::load(path)?;
            db.check_header(&header)?;
            db
        } else {
            let db = ShareDatabase::new(header);
            db.persist(path)?;
            db
        };
        Ok(DatabaseFile {
            db,
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends records, then updates the header count.
    pub fn append(&mut self, records: Vec<SharedRecord>) -> Result<u64, DbError> {
        if records.is_empty() {
            return Ok(self.db.len() as u64);
        }
        let mut f = OpenOptions::new().read(true).write(true).open(&self.path)?;
        let expected = HEADER_LEN as u64 + self.db.len() as u64 * self.db.header.record_bytes() as u64;
        if f.metadata()?.len() != expected {
            return Err(DbError::Corrupt("file length disagrees with record count".into()));
        }
        f.seek(SeekFrom::End(0))?;
        let mut buf = Vec::with_capacity(records.len() * self.db.header.record_bytes());
        for r in &records {
            ShareDatabase::encode_record(r, &mut buf);
        }
        f.write_all(&buf)?;
        let new_count = (self.db.len() + records.len()) as u64;
        f.seek(SeekFrom::Start(COUNT_OFFSET))?;
        f.write_all(&new_count.to_be_bytes())?;
        f.sync_data()?;
        self.db.records.extend(records);
        Ok(new_count)
    }
}
