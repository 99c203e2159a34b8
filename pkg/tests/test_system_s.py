import random

import pytest

from pocsim import messages as msgs
from pocsim.chain import SBlock, verify_chain
from pocsim.fork_attack import forge_history
from pocsim.slicing import ConfigError
from pocsim.system_s import (Authenticator, ReplicaBehavior, Sequencer, SystemConfig,
                             check_quorum, corrupt, gossip, grant_key_compromise,
                             miner_identity, parse_miner_identity, replica_identity)
from pocsim.scenario import ScenarioConfig


def make_seq(f_miners=1, cap=8):
    auth = Authenticator(7)
    cfg = SystemConfig(n_miners=2 * f_miners + 1, f_miners=f_miners, txns_per_block=cap)
    return Sequencer(cfg, auth, random.Random(0)), auth


def signed(auth, mid, body):
    return auth.signer_for(miner_identity(mid)).sign(body)


class TestConfig:
    def test_bounds(self):
        SystemConfig().validate()
        with pytest.raises(ConfigError):
            SystemConfig(n_replicas=3, f_replicas=1).validate()
        with pytest.raises(ConfigError):
            SystemConfig(n_miners=2, f_miners=1).validate()
        with pytest.raises(ConfigError):
            SystemConfig(sigma=0).validate()

    def test_identities(self):
        assert parse_miner_identity(miner_identity(12)) == 12
        assert parse_miner_identity(replica_identity(1)) is None
        assert parse_miner_identity("miner-x") is None


class TestAuthenticator:
    def test_sign_verify(self):
        auth = Authenticator(3)
        s = signed(auth, 0, msgs.Shift(1, 0, 0))
        assert auth.verify(s)
        forged = msgs.Signed(s.body, miner_identity(1), s.tag)
        assert not auth.verify(forged)
        assert not Authenticator(4).verify(s)

    def test_compromise_gated(self):
        auth = Authenticator(3)
        with pytest.raises(PermissionError):
            grant_key_compromise(auth, "eve", [miner_identity(0)])
        auth.allow_compromise = True
        cap = grant_key_compromise(auth, "eve", [miner_identity(0), replica_identity(1)])
        assert auth.verify(cap.sign(miner_identity(0), msgs.Shift(1, 0, 0)))
        with pytest.raises(PermissionError):
            cap.sign(miner_identity(1), msgs.Shift(1, 0, 0))
        block, tag = cap.forge_sblock(5, 1, [b"x"])
        assert auth.verify_bytes(replica_identity(1), block.encode(), tag)

    def test_forged_history_still_fails(self):
        cfg = ScenarioConfig(mode="sha256", difficulty=12, nonce_bits=16)
        genesis = cfg.genesis()[0]
        auth = Authenticator(0, allow_compromise=True)
        ids = [miner_identity(i) for i in range(4)] + [replica_identity(i) for i in range(4)]
        chain = forge_history(genesis, grant_key_compromise(auth, "eve", ids), 3, 2)
        forged = chain.blocks[0].sblocks  # internally consistent content
        assert all(s.root_ok() for s in forged)
        report = verify_chain(chain)
        assert not report.ok and "nonce" in report.failure and report.block == 1

    def test_quorum(self):
        auth = Authenticator(3)
        votes = [signed(auth, i, msgs.Shift(1, 0, 0)) for i in range(2)]
        key = ("shift", 1, 0, 0)
        assert check_quorum(auth, votes, key, 2)
        assert not check_quorum(auth, votes[:1], key, 2)
        assert not check_quorum(auth, votes + votes[:1], key, 3)  # duplicates do not count
        assert not check_quorum(auth, votes, ("shift", 1, 0, 1), 2)
        mixed = votes[:1] + [signed(auth, 5, msgs.Shift(1, 0, 1))]
        assert not check_quorum(auth, mixed, key, 2)


class TestSequencer:
    def test_filler_and_gapless(self):
        seq, _ = make_seq()
        blocks = [seq.commit() for _ in range(5)]
        assert [b.seq for b in blocks] == [1, 2, 3, 4, 5]
        assert all(len(b.txns) == 8 and b.root_ok() for b in blocks)
        assert [b.proposer for b in blocks] == [1, 2, 3, 0, 1]

    def test_nonce_quorum(self):
        seq, auth = make_seq(f_miners=1)
        seq.submit(signed(auth, 0, msgs.NonceFind(1, 0, 42)))
        assert not seq.has_priority()
        seq.submit(signed(auth, 0, msgs.NonceFind(1, 0, 42)))  # same miner again
        assert not seq.has_priority()
        seq.submit(signed(auth, 1, msgs.NonceFind(1, 0, 42)))
        block = seq.commit()
        att = [m for m in block.messages() if isinstance(m, msgs.NonceAttest)]
        assert len(att) == 1 and att[0].nonce == 42 and len(att[0].votes) == 2

    def test_lowest_nonce_wins_and_single_attestation(self):
        seq, auth = make_seq(f_miners=1)
        for nonce in (90, 17):
            for mid in (0, 1):
                seq.submit(signed(auth, mid, msgs.NonceFind(1, 0, nonce)))
        b1 = seq.commit()
        b2 = seq.commit()
        atts = [m for b in (b1, b2) for m in b.messages() if isinstance(m, msgs.NonceAttest)]
        assert [a.nonce for a in atts] == [17]
        for mid in (0, 1):
            seq.submit(signed(auth, mid, msgs.NonceFind(1, 0, 5)))
        assert not any(isinstance(m, msgs.NonceAttest) for m in seq.commit().messages())

    def test_rejects_forged_nonce(self):
        seq, auth = make_seq()
        other = Authenticator(99)
        assert not seq.submit(signed(other, 0, msgs.NonceFind(1, 0, 1)))
        assert seq.stats.rejected == 1

    def test_cert_dedup_and_next_block(self):
        seq, auth = make_seq(f_miners=1)
        votes = tuple(signed(auth, i, msgs.Shift(1, 0, 0)) for i in range(2))
        cert = msgs.ShiftCert(1, 0, 0, votes)
        assert seq.submit(cert)
        assert not seq.submit(cert)
        block = seq.commit()
        assert msgs.decode(block.txns[0]) == cert
        assert not seq.submit(cert)
        assert not seq.submit(msgs.ShiftCert(2, 0, 0, votes[:1]))

    def test_final_shift_blocks_nonce(self):
        seq, auth = make_seq(f_miners=1)
        votes = tuple(signed(auth, i, msgs.Shift(1, 0, 1)) for i in range(2))
        seq.submit(msgs.ShiftCert(1, 0, 1, votes))
        seq.commit()
        for mid in (0, 1):
            seq.submit(signed(auth, mid, msgs.NonceFind(1, 0, 3)))
        assert not seq.has_priority()

    def test_capacity(self):
        seq, _ = make_seq(cap=2)
        for i in range(5):
            seq.submit(msgs.SetDifficulty(i))
        assert len(seq.commit(fill=False).txns) == 2
        assert seq.has_priority()

    def test_export(self):
        seq, _ = make_seq()
        seq.commit()
        line = seq.export_jsonl().splitlines()[0]
        assert SBlock.decode(line.encode()) == seq.log[0]


class TestGossip:
    def setup_method(self):
        self.auth = Authenticator(1)
        self.signers = {r: self.auth.signer_for(replica_identity(r)) for r in range(4)}
        self.block = SBlock.build(1, 1, [msgs.ClientPayload(0, 1, "a").encode(),
                                         msgs.SetDifficulty(3).encode()])

    def copies_per_miner(self, behaviors):
        out = {}
        for mid, copy in gossip(self.block, behaviors, self.signers, [0, 1]):
            out.setdefault(mid, []).append(copy)
        return out

    def test_all_honest(self):
        got = self.copies_per_miner({})
        assert all(len(v) == 4 and all(c.sblock == self.block for c in v) for v in got.values())

    def test_mute(self):
        got = self.copies_per_miner({2: ReplicaBehavior("mute")})
        assert all(len(v) == 3 for v in got.values())

    @pytest.mark.parametrize("rule", ["drop-priority", "garble", "per-miner"])
    def test_equivocator_still_leaves_quorum(self, rule):
        got = self.copies_per_miner({3: ReplicaBehavior("equivocator", rule)})
        for mid, copies in got.items():
            exact = [c for c in copies if c.sblock.encode() == self.block.encode()]
            assert len(exact) == 3
            bad = [c for c in copies if c.replica == 3][0]
            assert bad.sblock != self.block and bad.sblock.root_ok()
            assert self.auth.verify_bytes(replica_identity(3), bad.sblock.encode(), bad.tag)

    def test_per_miner_differs(self):
        assert corrupt(self.block, "per-miner", 0) != corrupt(self.block, "per-miner", 1)

    def test_bad_behavior(self):
        with pytest.raises(ConfigError):
            ReplicaBehavior("lazy")
