//! Small platform shared by unit tests.

use crate::mem::{MemRegionDecl, PhysAddr, PhysMemory, RegionKind};
use crate::os::{Os, OsConfig};
use crate::soc::{Master, MasterKind, RegionUpdate, Soc};
use crate::xmpu::{Smid, XmpuInstance};

pub const GRANT_BASE: u64 = 0x70bd_0000;
pub const GRANT_SIZE: u64 = 0x10_0000;

pub fn pa(v: u64) -> PhysAddr {
    PhysAddr::new(v).unwrap()
}

/// One unit over the low 2 GiB, a 1 MiB secure DDR window in slot 0 (not
/// yet valid) and a separate heap pool.
pub fn small_os(seed: u32) -> Os {
    let mem = PhysMemory::new(
        vec![
            MemRegionDecl::new("RPU_DDR_LOW_S_BASE", GRANT_BASE, GRANT_SIZE, RegionKind::Ddr).unwrap(),
            MemRegionDecl::new("APU_DDR_LOW_NS_BASE", 0x1000_0000, 0x400_0000, RegionKind::Ddr).unwrap(),
        ],
        0,
    )
    .unwrap();
    let units = vec![XmpuInstance::new("DDR_XMPU0", pa(0), pa(0x7fff_fffc))];
    let masters = vec![
        Master {
            kind: MasterKind::Apu,
            smid: Smid::truncate(0x060),
            secure_master: false,
        },
        Master {
            kind: MasterKind::Rpu,
            smid: Smid::truncate(0x000),
            secure_master: false,
        },
        Master {
            kind: MasterKind::Pmu,
            smid: Smid::truncate(0x0c0),
            secure_master: true,
        },
    ];
    let mut soc = Soc::new(mem, units, masters).unwrap();
    let boot = RegionUpdate {
        slot: 0,
        start: Some(pa(GRANT_BASE)),
        end: Some(pa(GRANT_BASE + GRANT_SIZE - 4)),
        smid_mask: Some(0),
        read_en: Some(true),
        write_en: Some(true),
        valid: Some(false),
        ..Default::default()
    };
    assert!(soc
        .program_isolation(MasterKind::Pmu, 0, &[boot], true)
        .unwrap()
        .passed());
    Os::new(
        soc,
        OsConfig {
            pid_seed: seed,
            isolation_pool: vec![(0, 0)],
            heap_pool: Some("APU_DDR_LOW_NS_BASE".into()),
            ..Default::default()
        },
    )
    .unwrap()
}
