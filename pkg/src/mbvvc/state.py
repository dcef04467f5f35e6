"""Model state: the four networks, their optimizers, counters and checkpoints.

Checkpoints are single-file named-array archives (see :mod:`mbvvc.archive`)
holding every parameter and optimizer moment plus a manifest with the
config fingerprint, step counters, stage tag and format version.
"""

import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .archive import load_arrays, save_arrays
from .data import SpeakerTable
from .errors import CheckpointError, PreconditionError
from .networks import AsrEncoder, Discriminator, ModelConfig, TtsDecoder, TtsPatcher

FORMAT_VERSION = 1
GROUPS = ("asr", "tts", "patcher", "disc")


def fingerprint(model_cfg, speakers):
    blob = json.dumps({"model": asdict(model_cfg), "speakers": speakers.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class ModelState:
    """Parameters for the encoder, decoder, patcher and critic.

    The patcher and critic (and their optimizers) exist only once
    :meth:`init_adversarial` has been called.
    """

    def __init__(self, model_cfg: ModelConfig, speakers: SpeakerTable, train_cfg=None, seed=0):
        from .training import StageConfig

        self.model_cfg = model_cfg
        self.speakers = speakers
        self.train_cfg = train_cfg or StageConfig()
        self.seed = seed
        torch.manual_seed(seed)
        self.asr = AsrEncoder(model_cfg)
        self.tts = TtsDecoder(model_cfg, len(speakers))
        tc = self.train_cfg
        self.opt_ae = torch.optim.Adam(
            list(self.asr.parameters()) + list(self.tts.parameters()), lr=tc.lr_ae, betas=tuple(tc.betas_ae))
        self.patcher = None
        self.disc = None
        self.opt_patcher = None
        self.opt_disc = None
        self.step = 0
        self.adv_step = 0

    @property
    def stage(self):
        return "adv" if self.patcher is not None else "ae"

    @property
    def fingerprint(self):
        return fingerprint(self.model_cfg, self.speakers)

    def init_adversarial(self):
        """Create fresh TTS-Patcher and critic parameters (idempotent)."""
        if self.patcher is not None:
            return
        tc = self.train_cfg
        torch.manual_seed(self.seed + 1)
        self.patcher = TtsPatcher(self.model_cfg, len(self.speakers))
        self.disc = Discriminator(self.model_cfg, len(self.speakers.target_ids))
        self.opt_patcher = torch.optim.Adam(self.patcher.parameters(), lr=tc.lr_patcher, betas=tuple(tc.betas_adv))
        self.opt_disc = torch.optim.Adam(self.disc.parameters(), lr=tc.lr_critic, betas=tuple(tc.betas_adv))

    def modules(self):
        out = {"asr": self.asr, "tts": self.tts}
        if self.patcher is not None:
            out.update(patcher=self.patcher, disc=self.disc)
        return out

    def optimizers(self):
        out = {"opt_ae": (self.opt_ae, ("asr", "tts"))}
        if self.patcher is not None:
            out.update(opt_patcher=(self.opt_patcher, ("patcher",)), opt_disc=(self.opt_disc, ("disc",)))
        return out

    def eval(self):
        for m in self.modules().values():
            m.eval()
        return self

    def parameter_arrays(self, group):
        module = self.modules()[group]
        return {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}

    def checksum(self, group):
        h = hashlib.sha256()
        for k, v in sorted(self.parameter_arrays(group).items()):
            h.update(k.encode())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()

    def require_stage1(self):
        if self.step <= 0:
            raise PreconditionError("stage 2 needs a trained stage-1 autoencoder (step counter is 0)")

    # -- serialization ----------------------------------------------------

    def _param_names(self, groups):
        names = []
        for g in groups:
            names += [f"{g}/{n}" for n, _ in self.modules()[g].named_parameters()]
        return names

    def to_arrays(self):
        arrays = {}
        for g, module in self.modules().items():
            for k, v in module.state_dict().items():
                arrays[f"{g}/{k}"] = v.detach().cpu().numpy()
        opt_meta = {}
        for oname, (opt, groups) in self.optimizers().items():
            names = self._param_names(groups)
            sd = opt.state_dict()
            for idx, st in sd["state"].items():
                for key, val in st.items():
                    arrays[f"{oname}/{names[idx]}/{key}"] = torch.as_tensor(val).detach().cpu().numpy()
            opt_meta[oname] = [{k: v for k, v in pg.items() if k != "params"} for pg in sd["param_groups"]]
        return arrays, opt_meta

    def save(self, path):
        arrays, opt_meta = self.to_arrays()
        meta = {
            "format_version": FORMAT_VERSION,
            "fingerprint": self.fingerprint,
            "step": self.step,
            "adv_step": self.adv_step,
            "stage": self.stage,
            "seed": self.seed,
            "model_config": asdict(self.model_cfg),
            "speakers": self.speakers.to_dict(),
            "optimizers": opt_meta,
        }
        return save_arrays(path, arrays, meta)

    @classmethod
    def load(cls, path, model_cfg=None, train_cfg=None, seed=None):
        """Restore a checkpoint.

        If ``model_cfg`` is given it must fingerprint-match the checkpoint.
        Stage-1 checkpoints load with no patcher/critic; call
        :meth:`init_adversarial` to add fresh ones.
        """
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"checkpoint not found: {path}")
        arrays, meta = load_arrays(path)
        if not meta or meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"checkpoint {path} has format version {meta and meta.get('format_version')}, "
                f"expected {FORMAT_VERSION}")
        speakers = SpeakerTable.from_dict(meta["speakers"])
        stored_cfg = ModelConfig(**meta["model_config"])
        if model_cfg is not None and fingerprint(model_cfg, speakers) != meta["fingerprint"]:
            raise CheckpointError(
                f"checkpoint {path} fingerprint {meta['fingerprint']} does not match the active config "
                f"({fingerprint(model_cfg, speakers)})")
        state = cls(stored_cfg, speakers, train_cfg, seed=meta["seed"] if seed is None else seed)
        if meta["stage"] == "adv":
            state.init_adversarial()
        for g, module in state.modules().items():
            sd = {k[len(g) + 1:]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith(g + "/")}
            module.load_state_dict(sd)
        for oname, (opt, groups) in state.optimizers().items():
            names = state._param_names(groups)
            st = {}
            for idx, name in enumerate(names):
                prefix = f"{oname}/{name}/"
                entry = {k[len(prefix):]: torch.from_numpy(v.copy()) for k, v in arrays.items()
                         if k.startswith(prefix)}
                if entry:
                    st[idx] = entry
            groups_meta = meta["optimizers"].get(oname)
            if groups_meta is None:
                continue
            pgs = []
            for pg, live in zip(groups_meta, opt.state_dict()["param_groups"]):
                pg = dict(pg)
                pg["betas"] = tuple(pg["betas"])
                pg["params"] = live["params"]
                pgs.append(pg)
            opt.load_state_dict({"state": st, "param_groups": pgs})
        state.step = meta["step"]
        state.adv_step = meta["adv_step"]
        return state
