"""Kernelized rank pooling: order-aware descriptors for multivariate
sequences, with Grassmannian sequence kernels and a small kernel SVM."""

from .config import RunConfig
from .errors import KrpError, NumericError, ValidationError
from .grassmann import RcgOptions, rcg_minimize
from .kernels import (RbfParams, cross_gram, gram, median_bandwidth, nystrom,
                      psd_project, rbf_eval)
from .pooling import (GrpDescriptor, HingeParams, SubspaceDescriptor,
                      VectorDescriptor, order_violation_rate, pool_average,
                      pool_bkrp, pool_grp, pool_ibkrp, pool_krpfs, pool_rp,
                      pool_sequence)
from .classify import (Metrics, SequenceKernelParams, SvmModel, cross_validate,
                       gram_sequences, seq_kernel_krpfs, svm_predict, svm_train)
from .seqio import (load_descriptor, load_manifest, load_sequence, preprocess,
                    save_descriptor, save_manifest, save_sequence, synth_order_benchmark,
                    synth_smooth)

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "KrpError", "NumericError", "ValidationError",
    "RcgOptions", "rcg_minimize",
    "RbfParams", "cross_gram", "gram", "median_bandwidth", "nystrom",
    "psd_project", "rbf_eval",
    "GrpDescriptor", "HingeParams", "SubspaceDescriptor", "VectorDescriptor",
    "order_violation_rate", "pool_average", "pool_bkrp", "pool_grp",
    "pool_ibkrp", "pool_krpfs", "pool_rp", "pool_sequence",
    "Metrics", "SequenceKernelParams", "SvmModel", "cross_validate",
    "gram_sequences", "seq_kernel_krpfs", "svm_predict", "svm_train",
    "load_descriptor", "load_manifest", "load_sequence", "preprocess",
    "save_descriptor", "save_manifest", "save_sequence",
    "synth_order_benchmark", "synth_smooth",
    "__version__",
]
