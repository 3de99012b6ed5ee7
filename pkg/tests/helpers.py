"""Small robot specs with hand-checkable geometry."""
from retargetkit.skeleton import KEYPOINTS, RobotSpec


def planar_arm_dict(l1=0.3, l2=0.2, limits=(-3.0, 3.0)):
    """Two z-axis revolute joints, links along +x; every keypoint maps onto the chain."""
    joints = [
        {"name": "j1", "parent": "base", "offset": {"p": [0, 0, 0]}, "axis": [0, 0, 1], "limits": list(limits)},
        {"name": "j2", "parent": "j1", "offset": {"p": [l1, 0, 0]}, "axis": [0, 0, 1], "limits": list(limits)},
        {"name": "tip", "type": "fixed", "parent": "j2", "offset": {"p": [l2, 0, 0]}},
    ]
    kp = {k: "base" for k in KEYPOINTS}
    kp.update(l_elbow="j2", l_wrist="tip", l_shoulder="j1")
    return {"name": "planar", "joints": joints, "keypoint_map": kp, "torso_joints": [],
            "arm_joints": ["j1", "j2"], "end_effectors": {"head": "base", "l_wrist": "tip", "r_wrist": "base"}}


def planar_arm(**kw) -> RobotSpec:
    return RobotSpec.from_dict(planar_arm_dict(**kw))
