"""numba intrinsics shared by kernels and harness.

Everything here is callable from ``@njit(nogil=True)`` code so timed regions
never touch the interpreter or the GIL.
"""

from llvmlite import ir
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic

CLOCK_MONOTONIC = 1


@intrinsic
def mono_ns(typingctx):
    """clock_gettime(CLOCK_MONOTONIC) in ns; same timebase as time.monotonic_ns()."""
    sig = types.int64()

    def codegen(context, builder, signature, args):
        i64, i32 = ir.IntType(64), ir.IntType(32)
        timespec = ir.LiteralStructType([i64, i64])
        fnty = ir.FunctionType(i32, [i32, timespec.as_pointer()])
        fn = cgutils.get_or_insert_function(builder.module, fnty, "clock_gettime")
        ts = cgutils.alloca_once(builder, timespec)
        builder.call(fn, [ir.Constant(i32, CLOCK_MONOTONIC), ts])
        sec = builder.load(cgutils.gep_inbounds(builder, ts, 0, 0))
        nsec = builder.load(cgutils.gep_inbounds(builder, ts, 0, 1))
        return builder.add(builder.mul(sec, ir.Constant(i64, 1_000_000_000)), nsec)

    return sig, codegen


def _item_ptr(context, builder, aryty, ary_val, idx):
    ary = context.make_array(aryty)(context, builder, ary_val)
    return cgutils.get_item_pointer(context, builder, aryty, ary, [idx], wraparound=False)


@intrinsic
def cas_u8(typingctx, arr, idx, expected, desired):
    """Sequentially consistent byte compare-and-swap; returns True on success."""
    if not (isinstance(arr, types.Array) and arr.dtype == types.uint8):
        return None
    sig = types.boolean(arr, idx, expected, desired)

    def codegen(context, builder, signature, args):
        ptr = _item_ptr(context, builder, signature.args[0], args[0], args[1])
        exp = context.cast(builder, args[2], signature.args[2], types.uint8)
        des = context.cast(builder, args[3], signature.args[3], types.uint8)
        pair = builder.cmpxchg(ptr, exp, des, "seq_cst", "seq_cst")
        return builder.extract_value(pair, 1)

    return sig, codegen


@intrinsic
def load_u8(typingctx, arr, idx):
    """Atomic (seq_cst) byte load; never hoisted out of a spin loop."""
    if not (isinstance(arr, types.Array) and arr.dtype == types.uint8):
        return None
    sig = types.uint8(arr, idx)

    def codegen(context, builder, signature, args):
        ptr = _item_ptr(context, builder, signature.args[0], args[0], args[1])
        return builder.load_atomic(ptr, "seq_cst", 1)

    return sig, codegen


@intrinsic
def store_u8(typingctx, arr, idx, value):
    if not (isinstance(arr, types.Array) and arr.dtype == types.uint8):
        return None
    sig = types.void(arr, idx, value)

    def codegen(context, builder, signature, args):
        ptr = _item_ptr(context, builder, signature.args[0], args[0], args[1])
        val = context.cast(builder, args[2], signature.args[2], types.uint8)
        builder.store_atomic(val, ptr, "seq_cst", 1)
        return context.get_dummy_value()

    return sig, codegen


@intrinsic
def sched_yield(typingctx):
    sig = types.void()

    def codegen(context, builder, signature, args):
        fnty = ir.FunctionType(ir.IntType(32), [])
        builder.call(cgutils.get_or_insert_function(builder.module, fnty, "sched_yield"), [])
        return context.get_dummy_value()

    return sig, codegen


@njit(nogil=True, cache=True)
def spin_until(start, yield_margin):
    """Wait for ``start``; yields the CPU while more than ``yield_margin`` ns remain,
    then spins on plain clock reads. Returns the first tick >= start."""
    now = mono_ns()
    while now < start:
        if start - now > yield_margin:
            sched_yield()
        now = mono_ns()
    return now
