"""Tests package."""







