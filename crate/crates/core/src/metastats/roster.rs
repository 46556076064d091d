use super::{Architecture, ModelMeta};

const ROSTER: [(&str, Architecture, u64); 14] = [
    ("rwkv-169m", Architecture::Rwkv, 169_342_464),
    ("rwkv-430m", Architecture::Rwkv, 430_397_440),
    ("rwkv-1.5b", Architecture::Rwkv, 1_515_106_304),
    ("rwkv-3b", Architecture::Rwkv, 2_984_627_200),
    ("pythia-160m", Architecture::Pythia, 162_322_944),
    ("pythia-410m", Architecture::Pythia, 405_334_016),
    ("pythia-1b", Architecture::Pythia, 1_011_781_632),
    ("pythia-1.4b", Architecture::Pythia, 1_414_647_808),
    ("pythia-2.8b", Architecture::Pythia, 2_775_208_960),
    ("mamba-130m", Architecture::Mamba, 129_135_360),
    ("mamba-370m", Architecture::Mamba, 371_516_416),
    ("mamba-790m", Architecture::Mamba, 793_204_224),
    ("mamba-1.4b", Architecture::Mamba, 1_372_178_432),
    ("mamba-2.8b", Architecture::Mamba, 2_768_345_600),
];

/// The 14 released checkpoints with their exact parameter counts.
pub fn canonical_roster() -> Vec<ModelMeta> {
    ROSTER.iter().map(|&(name, arch, params)| ModelMeta::new(name, arch, params)).collect()
}
