"""Numerical laboratory for infinite-factor zero-coupon bond markets."""
