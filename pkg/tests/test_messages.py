import pytest
from hypothesis import given, strategies as st

from pocsim import messages as msgs
from pocsim.system_s import Authenticator, miner_identity

small = st.integers(0, 2**40)


class TestCodec:
    @given(small, small, small)
    def test_round_trip_votes(self, b, m, x):
        for body in (msgs.NonceFind(b, m, x), msgs.Shift(b, m, x),
                     msgs.Penalty(b, m, x, (1, 2)), msgs.SetDifficulty(x),
                     msgs.JoinMiner(b, m, x, 0, 1), msgs.LeaveMiner(b, m)):
            assert msgs.decode(body.encode()) == body

    def test_certificate_round_trip(self):
        auth = Authenticator(1)
        votes = tuple(auth.signer_for(miner_identity(i)).sign(msgs.Shift(3, 0, 1))
                      for i in range(2))
        cert = msgs.ShiftCert(3, 0, 1, votes)
        again = msgs.decode(cert.encode())
        assert again == cert and all(auth.verify(v) for v in again.votes)

    def test_canonical(self):
        assert msgs.canonical_json({"b": 1, "a": [1, 2]}) == b'{"a":[1,2],"b":1}'

    def test_merge_count_distinguishes(self):
        assert msgs.NonceFind(1, 0, 5).encode() != msgs.NonceFind(1, 1, 5).encode()

    def test_vote_keys(self):
        assert msgs.vote_key(msgs.Shift(1, 2, 3)) == ("shift", 1, 2, 3)
        assert msgs.vote_key(msgs.Penalty(1, 0, 2, (4,))) == ("penalty", 1, 0, 2, (4,))
        with pytest.raises(TypeError):
            msgs.vote_key(msgs.SetDifficulty(3))

    def test_unknown_kind(self):
        with pytest.raises(KeyError):
            msgs.decode(b'{"kind":"nope"}')
