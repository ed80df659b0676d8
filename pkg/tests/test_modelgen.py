import numpy as np
import pytest

from chainforge.descriptor import parse, serialize
from chainforge.geometry import Pose
from chainforge.identify import build_chain, build_tree, to_descriptor
from chainforge.modelgen import (
    InconsistentChain,
    JOINT_FIXED,
    JOINT_REVOLUTE,
    generate_model,
    model_world_frames,
    read_model,
    write_model,
)
from chainforge.synth import forward_poses, synthesize

from helpers import PAPER_CHAINS, make_two_branch_scene, random_base


def chain_for(db, text, thetas, assignment=None):
    obs = synthesize(parse(text), thetas, db, assignment=assignment)
    return build_chain(obs, db)


class TestGenerateModel:
    def test_link_and_joint_counts(self, db):
        model = generate_model(chain_for(db, "I-T0-G0", [25.0, -40.0]), db)
        assert [l.name for l in model.links] == ["I-001_in", "I-001_out", "T-001", "G-001"]
        revolute = [j for j in model.joints if j.joint_type == JOINT_REVOLUTE]
        fixed = [j for j in model.joints if j.joint_type == JOINT_FIXED]
        assert len(revolute) == 2
        assert len(fixed) == 1

    def test_single_tool(self, db):
        model = generate_model(chain_for(db, "G", []), db)
        assert len(model.links) == 1
        assert model.joints == []

    def test_climbing_robot_tools_at_both_ends(self, db):
        text, thetas, assignment = PAPER_CHAINS[3]
        model = generate_model(chain_for(db, text, thetas, assignment), db)
        names = [l.name for l in model.links]
        assert names[0] == "G-002"  # base gripper
        assert "G-001" in names  # end gripper
        gripper_links = [n for n in names if n.startswith("G-")]
        assert len(gripper_links) == 2

    def test_metadata_description_matches_serialization(self, db):
        chain = chain_for(db, "I-T'0-T'0-A0-t0-i0-g0", [15.0, -40.0, 55.0, 20.0, -40.0])
        model = generate_model(chain, db, metadata={"method": "geometric"})
        assert model.metadata["description"] == [serialize(to_descriptor(chain))]
        assert model.metadata["method"] == "geometric"
        assert model.metadata["bus_ids"]["I-001"] == 13

    def test_limit_violation_rejected(self, db):
        chain = chain_for(db, "T-G0", [30.0])
        chain.links[0].joint_angle = 500.0
        with pytest.raises(InconsistentChain):
            generate_model(chain, db)

    def test_joint_graph_is_tree(self, db):
        model = generate_model(chain_for(db, "I-T0-G0", [25.0, -40.0]), db)
        children = [j.child for j in model.joints]
        assert len(children) == len(set(children))
        model_world_frames(model)  # raises if not a rooted tree


class TestForwardKinematicsAgreement:
    @pytest.mark.parametrize("case", range(4))
    def test_master_positions_match_scene(self, db, case):
        text, thetas, assignment = PAPER_CHAINS[case]
        desc = parse(text)
        base = random_base(np.random.default_rng(40 + case))
        placements = forward_poses(desc, thetas, db, base=base, assignment=assignment)
        chain = build_chain(
            synthesize(desc, thetas, db, base=base, assignment=assignment), db
        )
        model = generate_model(chain, db)
        frames = model_world_frames(model, base_pose=chain.links[0].module.master_pose)
        for pl in placements:
            name = pl.serial + ("_in" if pl.output_pose is not None else "")
            assert (
                np.linalg.norm(frames[name].translation - pl.master_pose.translation)
                <= 1e-6
            )

    def test_joint_origin_distances(self, db):
        # Consecutive joint origins coincide with module masters, so their
        # spacing reproduces the synthesized master spacing.
        desc = parse("L-T0-l0-g0")
        placements = forward_poses(desc, [50.0], db)
        chain = build_chain(synthesize(desc, [50.0], db), db)
        model = generate_model(chain, db)
        frames = model_world_frames(model, base_pose=chain.links[0].module.master_pose)
        masters = [pl.master_pose.translation for pl in placements]
        for joint, master in zip(model.joints, masters[1:]):
            assert np.linalg.norm(frames[joint.child].translation - master) <= 1e-6


class TestTreeModels:
    def test_two_branch_tree_shares_trunk(self, db):
        rng = np.random.default_rng(77)
        obs, trunk, arm1, arm2 = make_two_branch_scene(rng, db)
        branches = build_tree(obs, db)
        model = generate_model(branches, db)
        names = {l.name for l in model.links}
        for serial in trunk[:-1] + arm1 + arm2:
            assert serial in names or f"{serial}_in" in names
        # Trunk emitted once even though both branches contain it.
        trunk_links = [n for n in names if n.startswith("L-")]
        assert len(trunk_links) == 1


class TestModelFiles:
    def test_json_round_trip(self, db, tmp_path):
        model = generate_model(chain_for(db, "I-T0-G0", [25.0, -40.0]), db)
        path = tmp_path / "robot.model.json"
        write_model(model, path)
        loaded = read_model(path)
        assert loaded.name == model.name
        assert loaded.links == model.links
        assert loaded.metadata == model.metadata
        for a, b in zip(model.joints, loaded.joints):
            assert a.name == b.name
            assert a.joint_type == b.joint_type
            assert a.parent == b.parent and a.child == b.child
            assert a.axis == b.axis
            assert a.limits == b.limits
            assert a.angle == b.angle
            assert a.origin.approx_equal(b.origin, tol=1e-12)

    def test_xml_round_trip(self, db, tmp_path):
        model = generate_model(chain_for(db, "I-T'0-G0", [25.0, -40.0]), db)
        path = tmp_path / "robot.xml"
        write_model(model, path)
        loaded = read_model(path)
        assert [l.name for l in loaded.links] == [l.name for l in model.links]
        for a, b in zip(model.joints, loaded.joints):
            assert (a.name, a.joint_type, a.parent, a.child) == (
                b.name,
                b.joint_type,
                b.parent,
                b.child,
            )
            assert a.origin.approx_equal(b.origin, tol=1e-9)
            if a.limits is not None:
                assert b.limits == pytest.approx(a.limits)
                assert b.angle == pytest.approx(a.angle)

    def test_xml_revolute_count(self, db, tmp_path):
        model = generate_model(chain_for(db, "I-T0-G0", [25.0, -40.0]), db)
        path = tmp_path / "robot.xml"
        write_model(model, path)
        text = path.read_text()
        assert text.count('type="revolute"') == 2

    def test_format_from_suffix(self, db, tmp_path):
        model = generate_model(chain_for(db, "L-G0", []), db)
        xml_path = tmp_path / "a.xml"
        json_path = tmp_path / "a.model.json"
        write_model(model, xml_path)
        write_model(model, json_path)
        assert xml_path.read_text().startswith("<?xml")
        assert json_path.read_text().lstrip().startswith("{")

    def test_unknown_format(self, db, tmp_path):
        model = generate_model(chain_for(db, "L-G0", []), db)
        with pytest.raises(ValueError):
            write_model(model, tmp_path / "a.bin", fmt="yaml")
